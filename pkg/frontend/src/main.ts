import { EditorApp } from './app.js';

const root = document.querySelector<HTMLDivElement>('#app');
if (!root) {
  throw new Error('root element #app not found');
}

const params = new URLSearchParams(window.location.search);
const app = new EditorApp(root, {
  serverUrl: params.get('server') ?? 'http://127.0.0.1:8000',
  seed: params.has('seed') ? Number(params.get('seed')) : undefined,
});

void app.start();

// handy when poking at the page from the console
(window as any).editorApp = app;
