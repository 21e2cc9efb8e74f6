/**
 * The console's single static page, rendered once per GET by the gateway.
 *
 * The inline script talks only to the gateway (SSE for pushed state, POST
 * for edits); it never sees the kernel socket. Chart math is embedded from
 * chart.ts as source text so the browser runs exactly the functions the
 * tests exercise. UI updates are batched per animation frame.
 */

import { markerOffsets, polyline, seriesColor } from "./chart.js";
import { Role } from "./protocol.js";

export interface PageConfig {
  role: Role;
  endpoint: string;
  ringCapacity: number;
}

const CHART_SOURCE = [polyline, markerOffsets, seriesColor]
  .map((fn) => fn.toString())
  .join("\n\n");

const STYLE = `
  :root { color-scheme: dark; }
  * { box-sizing: border-box; }
  body { margin: 0; background: #14161a; color: #d6dae0; font: 14px/1.45 ui-monospace, SFMono-Regular, Menlo, Consolas, monospace; }
  header { display: flex; align-items: baseline; gap: 1rem; padding: 0.7rem 1.2rem; border-bottom: 1px solid #2a2e35; }
  header h1 { font-size: 1.05rem; margin: 0; letter-spacing: 0.04em; }
  header .endpoint { color: #8a93a0; }
  .badge { padding: 0.1rem 0.55rem; border-radius: 0.6rem; font-size: 0.8rem; border: 1px solid #3a3f48; }
  .badge.live { background: #12321c; color: #7fdc9a; border-color: #1e5c31; }
  .badge.connecting, .badge.disconnected { background: #33280f; color: #e8c06a; border-color: #6b5417; }
  .badge.auth-failed, .badge.gateway-unreachable { background: #3a1515; color: #ef9a9a; border-color: #7a2727; }
  main { display: grid; grid-template-columns: minmax(0, 3fr) minmax(0, 2fr); gap: 1rem; padding: 1rem 1.2rem; max-width: 1500px; }
  section { background: #1b1e24; border: 1px solid #2a2e35; border-radius: 0.5rem; padding: 0.8rem 1rem; min-width: 0; }
  section h2 { margin: 0 0 0.6rem; font-size: 0.85rem; text-transform: uppercase; letter-spacing: 0.1em; color: #8a93a0; }
  #chart-card { grid-column: 1; }
  canvas { width: 100%; height: 260px; background: #13151a; border: 1px solid #262a31; border-radius: 0.3rem; }
  #legend { display: flex; flex-wrap: wrap; gap: 0.4rem 1.1rem; margin-top: 0.55rem; }
  #legend .key { display: inline-flex; align-items: center; gap: 0.4rem; }
  #legend .swatch { width: 0.8rem; height: 0.2rem; display: inline-block; }
  form label { display: block; margin-bottom: 0.55rem; color: #8a93a0; }
  form input[type="text"], form input[type="number"], form textarea {
    display: block; width: 100%; margin-top: 0.2rem; padding: 0.35rem 0.5rem;
    background: #13151a; color: #d6dae0; border: 1px solid #343a44; border-radius: 0.3rem; font: inherit;
  }
  form button { padding: 0.4rem 0.9rem; background: #24447a; color: #dbe6f5; border: 1px solid #36598f; border-radius: 0.3rem; font: inherit; cursor: pointer; }
  form button:disabled, form input:disabled, form textarea:disabled { opacity: 0.45; cursor: not-allowed; }
  #f-status { margin-top: 0.5rem; min-height: 1.2rem; white-space: pre-line; }
  #f-status.err { color: #ef9a9a; }
  #f-status.okay { color: #7fdc9a; }
  #f-conflict { margin-top: 0.5rem; padding: 0.5rem 0.7rem; background: #33280f; border: 1px solid #6b5417; border-radius: 0.3rem; color: #e8c06a; }
  ol { margin: 0; padding-left: 1.4rem; max-height: 14rem; overflow-y: auto; }
  ol li { margin-bottom: 0.15rem; overflow-wrap: anywhere; }
  table { width: 100%; border-collapse: collapse; font-size: 0.85rem; }
  th, td { text-align: left; padding: 0.18rem 0.5rem 0.18rem 0; border-bottom: 1px solid #262a31; overflow-wrap: anywhere; }
  th { color: #8a93a0; font-weight: normal; }
  .muted { color: #616a76; }
  @media (max-width: 950px) { main { grid-template-columns: minmax(0, 1fr); } }
`;

const SCRIPT = `
const capacity = CONFIG.ringCapacity;
const model = {
  state: "connecting", lastError: "",
  modules: [], profile: "", program: null,
  weights: [], interrupts: [], directives: [],
};
let dirty = true;
let formDirty = false;
let stmData = null;

const $ = (id) => document.getElementById(id);

$("endpoint").textContent = CONFIG.endpoint;
$("role").textContent = CONFIG.role;

function pushRing(arr, item) {
  arr.push(item);
  if (arr.length > capacity) arr.shift();
}

// --- gateway stream ---------------------------------------------------

const es = new EventSource("/events");
es.addEventListener("snapshot", (e) => {
  const snap = JSON.parse(e.data);
  Object.assign(model, snap);
  if (!formDirty) fillForm();
  dirty = true;
});
es.addEventListener("weights", (e) => {
  const d = JSON.parse(e.data);
  if (d.modules && d.modules.length) model.modules = d.modules;
  if (d.profile) model.profile = d.profile;
  pushRing(model.weights, d.sample);
  dirty = true;
});
es.addEventListener("interrupt", (e) => {
  pushRing(model.interrupts, JSON.parse(e.data).mark);
  dirty = true;
});
es.addEventListener("directive", (e) => {
  pushRing(model.directives, JSON.parse(e.data).entry);
  dirty = true;
});
es.addEventListener("state", (e) => {
  const d = JSON.parse(e.data);
  model.state = d.state;
  model.lastError = d.lastError || "";
  dirty = true;
});
es.addEventListener("program", (e) => {
  model.program = JSON.parse(e.data).program;
  if (!formDirty) fillForm();
  dirty = true;
});
es.onerror = () => {
  model.state = "gateway-unreachable";
  dirty = true;
};

// --- rendering, batched per animation frame ----------------------------

function frame() {
  if (dirty) {
    dirty = false;
    redraw();
  }
  requestAnimationFrame(frame);
}

function redraw() {
  const stateEl = $("state");
  stateEl.textContent = model.state + (model.lastError ? ": " + model.lastError : "");
  stateEl.className = "badge " + model.state;
  $("profile").textContent = model.profile ? "profile: " + model.profile : "";
  drawChart();
  drawLegend();
  drawList($("directives"), model.directives, (d) =>
    d.kind + " " + JSON.stringify(d.argument) + " @" + d.atNs);
  drawList($("interrupts"), model.interrupts, (m) =>
    m.interruptId + " proc=" + m.procId + " divergence=" + m.divergence + " @" + m.atNs);
  drawStm();
  const version = model.program ? model.program.version : "?";
  $("program-version").textContent = "v" + version;
  $("f-next-version").textContent = model.program ? String(model.program.version + 1) : "?";
}

function drawChart() {
  const canvas = $("chart");
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#262a31";
  ctx.lineWidth = 1;
  for (const frac of [0.25, 0.5, 0.75]) {
    ctx.beginPath();
    ctx.moveTo(0, h * frac);
    ctx.lineTo(w, h * frac);
    ctx.stroke();
  }
  const atNs = model.weights.map((s) => s.atNs);
  model.modules.forEach((id, i) => {
    const series = model.weights.map((s) => s.weights[i]);
    const pts = polyline(series, w, h, 0, 1);
    if (pts.length === 0) return;
    ctx.strokeStyle = seriesColor(i);
    ctx.lineWidth = 1.6;
    ctx.beginPath();
    pts.forEach((p, j) => (j === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
    if (pts.length === 1) {
      ctx.fillStyle = seriesColor(i);
      ctx.fillRect(pts[0].x - 2, pts[0].y - 2, 4, 4);
    }
  });
  ctx.strokeStyle = "#e25555";
  ctx.lineWidth = 1.4;
  for (const x of markerOffsets(model.interrupts.map((m) => m.atNs), atNs, w)) {
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, h);
    ctx.stroke();
  }
}

function drawLegend() {
  const last = model.weights.length ? model.weights[model.weights.length - 1].weights : [];
  $("legend").innerHTML = model.modules.map((id, i) => {
    const value = typeof last[i] === "number" ? last[i].toFixed(3) : "-";
    return '<span class="key"><span class="swatch" style="background:' + seriesColor(i) +
      '"></span>' + escapeHtml(id) + ' <span class="muted">' + value + "</span></span>";
  }).join("");
}

function drawList(el, items, toText) {
  const tail = items.slice(-50).reverse();
  el.innerHTML = tail.map((item) => "<li>" + escapeHtml(toText(item)) + "</li>").join("");
}

function drawStm() {
  const tbody = $("stm").querySelector("tbody");
  if (!stmData) {
    tbody.innerHTML = '<tr><td colspan="4" class="muted">no data yet</td></tr>';
    return;
  }
  $("stm-meta").textContent = "rev " + stmData.revision + ", occupancy " + stmData.occupancy;
  tbody.innerHTML = stmData.entries.slice(-30).reverse().map((row) =>
    "<tr><td>" + escapeHtml(row.key) + "</td><td>" + escapeHtml(row.author) +
    "</td><td>" + row.strength.toFixed(2) + "</td><td>" + row.revision + "</td></tr>"
  ).join("");
}

function escapeHtml(text) {
  return String(text).replace(/[&<>"']/g, (c) => (
    { "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" }[c]
  ));
}

// --- short-term memory poll --------------------------------------------

async function pollStm() {
  try {
    const res = await fetch("/stm");
    if (res.ok) {
      stmData = await res.json();
      dirty = true;
    }
  } catch {}
}
setInterval(pollStm, 2000);
pollStm();

// --- program editor -----------------------------------------------------

function fillForm() {
  if (!model.program) return;
  $("f-weights").value = model.program.base_log_weights.join(", ");
  $("f-threshold").value = String(model.program.interrupt_threshold);
  $("f-goal").value = model.program.primary_goal;
  $("f-instructions").value = model.program.instructions.join("\\n");
}

for (const el of document.querySelectorAll("#editor input, #editor textarea")) {
  el.addEventListener("input", () => { formDirty = true; });
}

if (CONFIG.role !== "admin") {
  $("f-status").textContent = "read-only (viewer token)";
}

$("editor").addEventListener("submit", async (event) => {
  event.preventDefault();
  const statusEl = $("f-status");
  $("f-conflict").hidden = true;
  const edit = {
    baseLogWeights: $("f-weights").value.split(",").map((s) => Number(s.trim())),
    interruptThreshold: Number($("f-threshold").value),
    primaryGoal: $("f-goal").value,
    instructions: $("f-instructions").value.split("\\n").map((s) => s.trim()).filter(Boolean),
  };
  statusEl.className = "";
  statusEl.textContent = "applying...";
  let result;
  try {
    const res = await fetch("/apply", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(edit),
    });
    result = await res.json();
  } catch (err) {
    statusEl.className = "err";
    statusEl.textContent = "gateway unreachable";
    return;
  }
  if (result.outcome === "applied") {
    statusEl.className = "okay";
    statusEl.textContent = "applied version " + result.version;
    formDirty = false;
  } else if (result.outcome === "conflict") {
    $("f-conflict").hidden = false;
    statusEl.className = "err";
    statusEl.textContent = "conflict: kernel is at version " + result.currentVersion;
    formDirty = false;
    fillForm();
  } else if (result.outcome === "invalid") {
    statusEl.className = "err";
    statusEl.textContent = result.problems.join("\\n");
  } else {
    statusEl.className = "err";
    statusEl.textContent = result.error || "failed";
  }
  dirty = true;
});

requestAnimationFrame(frame);
`;

export function renderPage(config: PageConfig): string {
  const safeConfig = JSON.stringify(config).replace(/</g, "\\u003c");
  const editable = config.role === "admin";
  const dis = editable ? "" : " disabled";
  return `<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>ogi console</title>
<meta name="viewport" content="width=device-width, initial-scale=1">
<style>${STYLE}</style>
</head>
<body>
<header>
  <h1>ogi console</h1>
  <span class="endpoint" id="endpoint"></span>
  <span class="badge" id="role"></span>
  <span class="badge connecting" id="state">connecting</span>
  <span class="muted" id="profile"></span>
</header>
<main>
  <section id="chart-card">
    <h2>module weights</h2>
    <canvas id="chart" width="900" height="260"></canvas>
    <div id="legend"></div>
  </section>
  <section id="editor-card">
    <h2>external program <span id="program-version" class="muted"></span></h2>
    <form id="editor" data-editable="${editable}">
      <label>base log-weights (comma separated, one per module)
        <input id="f-weights" type="text" autocomplete="off" spellcheck="false"${dis}>
      </label>
      <label>interrupt threshold
        <input id="f-threshold" type="number" step="0.05" min="0" max="1"${dis}>
      </label>
      <label>primary goal
        <input id="f-goal" type="text" autocomplete="off"${dis}>
      </label>
      <label>instructions (one per line)
        <textarea id="f-instructions" rows="3" spellcheck="false"${dis}></textarea>
      </label>
      <button id="f-apply" type="submit"${dis}>apply as version <span id="f-next-version">?</span></button>
      <div id="f-status"></div>
      <div id="f-conflict" hidden>version conflict: another administration landed first.
        The form reloaded to the current program; review and apply again.</div>
    </form>
  </section>
  <section id="directives-card">
    <h2>directive log</h2>
    <ol id="directives" reversed></ol>
  </section>
  <section id="stm-card">
    <h2>short-term memory <span id="stm-meta" class="muted"></span></h2>
    <table id="stm">
      <thead><tr><th>key</th><th>author</th><th>strength</th><th>rev</th></tr></thead>
      <tbody></tbody>
    </table>
  </section>
  <section id="interrupts-card">
    <h2>interrupts</h2>
    <ol id="interrupts" reversed></ol>
  </section>
</main>
<script type="module">
${CHART_SOURCE}

const CONFIG = ${safeConfig};
${SCRIPT}
</script>
</body>
</html>
`;
}
