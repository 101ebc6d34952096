import { SessionClient, SocketLike } from "./client";
import { ConsoleView } from "./ui";

class BrowserSocket implements SocketLike {
  onmessage: ((event: { data: string }) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((err: unknown) => void) | null = null;
  private ws: WebSocket;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onmessage = (ev) => this.onmessage?.({ data: String(ev.data) });
    this.ws.onopen = () => this.onopen?.();
    this.ws.onclose = () => this.onclose?.();
    this.ws.onerror = (err) => this.onerror?.(err);
  }

  send(data: string): void {
    this.ws.send(data);
  }

  close(): void {
    this.ws.close();
  }
}

function websocketFactory(url: string): SocketLike {
  return new BrowserSocket(url);
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const url = params.get("session") ?? "ws://127.0.0.1:8765";
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const client = new SessionClient(url, websocketFactory);
  const view = new ConsoleView(root, client);
  client.connect();
  // rendering is decoupled from message arrival
  const tick = () => {
    view.render();
    window.requestAnimationFrame(tick);
  };
  window.requestAnimationFrame(tick);
}

window.addEventListener("load", main);
