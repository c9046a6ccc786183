/** Browser entry point: wire the session to the page and start it. */

import { AnnotateApi } from "./api.js";
import { AnnotationSession } from "./session.js";
import { DraftStore } from "./storage.js";
import { mountAnnotationApp } from "./ui.js";

function annotatorId(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("annotator");
  if (fromQuery) return fromQuery;
  const id = window.prompt("Annotator id:")?.trim();
  if (!id) throw new Error("an annotator id is required");
  return id;
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

const session = new AnnotationSession(
  new AnnotateApi(),
  new DraftStore(window.localStorage),
  annotatorId(),
);
mountAnnotationApp(root, session);
void session.start();
