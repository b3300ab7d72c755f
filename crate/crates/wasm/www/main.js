// Built by: wasm-bindgen --target web --out-dir www/pkg <webforge_wasm.wasm>
import init, { simulate, extract_prompts, route_urls } from "./pkg/webforge_wasm.js";

const $ = (id) => document.getElementById(id);

function el(tag, attrs = {}, ...children) {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else if (k === "style") node.setAttribute("style", v);
    else node[k] = v;
  }
  for (const c of children) node.append(c instanceof Node ? c : document.createTextNode(String(c)));
  return node;
}

function show(target, result) {
  target.replaceChildren();
  if (result.error) {
    target.append(el("p", { class: "error" }, result.error));
    return false;
  }
  return true;
}

const ms = (v) => `${Math.round(v)} ms`;
const shortUrl = (u) => u.replace(/^https?:\/\/[^/]+/, "") || "/";

function waterfall(sim) {
  const end = Math.max(sim.original.metrics.plt_ms, sim.generated.metrics.plt_ms);
  const table = el("table", {},
    el("tr", {}, el("th", {}, "resource"), el("th", {}, "bytes"), el("th", {}, "original"), el("th", {}, "generated")));
  sim.original.resources.forEach((o, i) => {
    const g = sim.generated.resources[i];
    const bar = (r) => {
      const left = (r.start_ms / end) * 100;
      const width = Math.max(((r.end_ms - r.start_ms) / end) * 100, 0.5);
      return el("div", { class: "track" },
        el("div", { class: r.generated ? "bar gen" : "bar", style: `left:${left}%;width:${width}%` }));
    };
    table.append(el("tr", {},
      el("td", {}, shortUrl(o.url) + (o.above_fold ? " *" : "")),
      el("td", { class: "num" }, o.bytes.toLocaleString()),
      el("td", { title: `${ms(o.start_ms)} - ${ms(o.end_ms)}` }, bar(o)),
      el("td", { title: `${ms(g.start_ms)} - ${ms(g.end_ms)}` }, bar(g))));
  });
  return table;
}

function runSimulation(event) {
  event?.preventDefault();
  const f = new FormData($("sim-form"));
  const sim = JSON.parse(simulate(f.get("page"), f.get("profile"), f.get("latency"), f.get("mode"),
    Number(f.get("connections")), Number(f.get("slots"))));
  const out = $("sim-out");
  if (!show(out, sim)) return;
  const sign = (d) => (d >= 0 ? `${ms(d)} faster` : `${ms(-d)} slower`);
  out.append(
    el("p", {},
      `SI ${ms(sim.original.metrics.si_ms)} vs ${ms(sim.generated.metrics.si_ms)} (${sign(sim.si_delta_ms)}). `,
      `PLT ${ms(sim.original.metrics.plt_ms)} vs ${ms(sim.generated.metrics.plt_ms)} (${sign(sim.plt_delta_ms)}). `,
      `${sim.savings_bytes.toLocaleString()} bytes not downloaded.`),
    el("p", {}, "* counts toward SI. Orange bars are generated locally."),
    waterfall(sim));
}

function runExtract() {
  const result = JSON.parse(extract_prompts($("html-in").value, $("base-url").value));
  const out = $("prompts-out");
  if (!show(out, result)) return;
  if (result.length === 0) {
    out.append(el("p", {}, "No images found."));
    return;
  }
  const table = el("table", {}, el("tr", {}, el("th", {}, "image"), el("th", {}, "source"), el("th", {}, "prompt")));
  for (const p of result) {
    table.append(el("tr", {}, el("td", {}, p.url), el("td", {}, p.kind), el("td", {}, p.prompt || "(empty)")));
  }
  out.append(table);
}

function runRoute() {
  const result = JSON.parse(route_urls($("urls-in").value, $("content-proxy").value, $("image-proxy").value));
  const out = $("routes-out");
  if (!show(out, result)) return;
  const table = el("table", {}, el("tr", {}, el("th", {}, "url"), el("th", {}, "proxy")));
  for (const r of result.routes) {
    table.append(el("tr", {}, el("td", {}, r.url), el("td", {}, `${r.proxy} (${r.image ? "image" : "content"})`)));
  }
  out.append(table, el("pre", {}, result.pac));
}

await init();
$("status").textContent = "Simulated loads, prompt extraction and PAC routing run locally in WebAssembly.";
$("sim-form").addEventListener("submit", runSimulation);
$("extract").addEventListener("click", runExtract);
$("route").addEventListener("click", runRoute);
runSimulation();
