import { PreferenceApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  void new PreferenceApp(root).start();
}
