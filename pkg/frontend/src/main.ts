/** Hash-routed single-page app: #/chat (default) and #/eval. */

import { createChatPage } from "./chat.js";
import { createEvalPage } from "./evalpage.js";

function sessionId(): string {
  const key = "rqakit.session";
  let id = window.localStorage.getItem(key);
  if (!id) {
    id = `web-${Math.random().toString(36).slice(2, 10)}`;
    window.localStorage.setItem(key, id);
  }
  return id;
}

function mount(): void {
  const app = document.querySelector<HTMLElement>("#app");
  if (!app) return;
  const route = window.location.hash || "#/chat";
  document.querySelectorAll("nav a").forEach((link) => {
    link.classList.toggle("active", link.getAttribute("href") === route);
  });
  if (route.startsWith("#/eval")) {
    createEvalPage(app);
  } else {
    createChatPage(app, sessionId());
  }
}

window.addEventListener("hashchange", mount);
mount();
