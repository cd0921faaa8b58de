import init, { select, simulate, designs } from "./pkg/ivselect_demo.js";

const $ = (id) => document.getElementById(id);
const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
  "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];

let view = null;

function intValue(id) {
  return Math.max(0, Math.floor(Number($(id).value) || 0));
}

function fmt(x, digits = 4) {
  return x === null || x === undefined ? "-" : Number(x).toFixed(digits);
}

function timed(statusId, fn) {
  const status = $(statusId);
  status.className = "muted";
  status.textContent = "running...";
  // Let the browser paint the status before the synchronous wasm call.
  setTimeout(() => {
    const t0 = performance.now();
    try {
      fn();
      status.textContent = `done in ${(performance.now() - t0).toFixed(0)} ms`;
    } catch (e) {
      status.className = "err";
      status.textContent = String(e.message || e);
    }
  }, 10);
}

function runSelection() {
  timed("sel-status", () => {
    view = JSON.parse(select($("sel-design").value, intValue("sel-n"),
      intValue("sel-seed"), $("sel-linkage").value));
    const leaves = view.dendrogram.leaves.length;
    const k = $("k");
    k.max = String(leaves);
    k.value = String(view.result.stop_k);
    $("stop-k").textContent = view.result.stop_k;
    $("explore").hidden = false;
    renderSummary();
    renderPath();
    renderK();
  });
}

function names(idx) {
  return idx.length ? idx.map((i) => `z${i + 1}`).join(", ") : "(none)";
}

function renderSummary() {
  const r = view.result;
  const t = view.truth;
  const hit = JSON.stringify(r.valid) === JSON.stringify(t.oracle_valid);
  const beta = r.fit.beta.map((b, i) => `&beta;<sub>${i + 1}</sub> = ${fmt(b)} (se ${fmt(view.std_errors[i])})`);
  $("summary").innerHTML =
    `<p><b>${r.invalid.length} invalid:</b> ${names(r.invalid)}<br>` +
    `<b>true invalid:</b> ${names(t.invalid)}<br>` +
    `${beta.join(", ")}; true effect 0. ` +
    (hit ? "Selection equals the oracle set." : "Selection differs from the oracle set.") +
    (r.all_rejected ? " <span class=\"err\">Every step was rejected.</span>" : "") + "</p>";
}

function renderPath() {
  const rows = view.result.path.map((f) => {
    const s = f.sargan;
    const cls = s.passed ? "pass" : "";
    return `<tr><td>${f.k}</td><td>${f.cluster_members.length}</td><td>${f.valid_ivs.length}</td>` +
      `<td>${fmt(s.statistic, 2)}</td><td>${s.df}</td><td>${fmt(s.p_value)}</td>` +
      `<td class="${cls}">${s.passed ? "pass" : "reject"}</td></tr>`;
  });
  $("path").innerHTML = "<tr><th>K</th><th>cluster size</th><th>valid IVs</th><th>Sargan</th>" +
    "<th>df</th><th>p-value</th><th></th></tr>" + rows.join("");
}

function renderK() {
  const k = Number($("k").value);
  $("k-label").textContent = k;
  const labels = view.dendrogram.memberships[k - 1];
  drawScatter(labels);
  const sizes = {};
  labels.forEach((l) => { sizes[l] = (sizes[l] || 0) + 1; });
  const parts = Object.entries(sizes).slice(0, PALETTE.length)
    .map(([l, s]) => `<span style="color:${PALETTE[l % PALETTE.length]}">&#9679;</span> ${s}`);
  $("legend").innerHTML = `cluster sizes: ${parts.join(" &nbsp; ")}` +
    (Object.keys(sizes).length > PALETTE.length ? " ..." : "");
}

function drawScatter(labels) {
  const canvas = $("scatter");
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 36;
  ctx.clearRect(0, 0, W, H);
  const pts = view.dendrogram.leaves.map((l) => l.coordinates);
  const twoD = pts[0].length >= 2;
  const xs = pts.map((p) => p[0]);
  const ys = twoD ? pts.map((p) => p[1]) : pts.map(() => 0);
  const range = (v) => {
    let lo = Math.min(...v), hi = Math.max(...v);
    if (hi - lo < 1e-9) { lo -= 1; hi += 1; }
    const m = 0.05 * (hi - lo);
    return [lo - m, hi + m];
  };
  const [x0, x1] = range(xs);
  const [y0, y1] = range(ys);
  const sx = (x) => pad + (x - x0) / (x1 - x0) * (W - 2 * pad);
  const sy = (y) => twoD ? H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad) : H / 2;

  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.beginPath();
  ctx.moveTo(pad, H - pad); ctx.lineTo(W - pad, H - pad);
  if (twoD) { ctx.moveTo(pad, pad); ctx.lineTo(pad, H - pad); }
  ctx.stroke();
  ctx.fillText(fmt(x0, 2), pad, H - pad + 16);
  ctx.fillText(fmt(x1, 2), W - pad - 30, H - pad + 16);
  ctx.fillText(twoD ? "estimate of beta 1 (x) vs beta 2 (y)" : "just-identified estimates of beta", W / 2 - 90, H - 8);
  if (twoD) {
    ctx.fillText(fmt(y1, 2), 2, pad + 4);
    ctx.fillText(fmt(y0, 2), 2, H - pad);
  }
  // The true effect is zero in every design.
  if (x0 < 0 && x1 > 0) {
    ctx.strokeStyle = "#bbb";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(sx(0), pad / 2); ctx.lineTo(sx(0), H - pad);
    ctx.stroke();
    ctx.setLineDash([]);
  }
  // In one dimension, stack points with the same label so overlaps stay visible.
  const jitter = {};
  pts.forEach((p, i) => {
    const l = labels[i];
    let y = sy(ys[i]);
    if (!twoD) {
      const key = `${l}:${Math.round(sx(xs[i]) / 6)}`;
      jitter[key] = (jitter[key] || 0) + 1;
      y -= (jitter[key] - 1) * 9 + (l % 4) * 3;
    }
    ctx.fillStyle = PALETTE[l % PALETTE.length];
    ctx.beginPath();
    ctx.arc(sx(xs[i]), y, 4, 0, 2 * Math.PI);
    ctx.fill();
  });
}

function runSimulation() {
  timed("mc-status", () => {
    const r = JSON.parse(simulate($("mc-design").value, intValue("mc-n"),
      intValue("mc-reps"), intValue("mc-seed")));
    const weak = r.design.startsWith("weak");
    const cols = [["MAE", "mae"], ["SD", "sd"], ["# invalid", "n_invalid"], ["p allinv", "p_allinv"],
      ["Coverage", "coverage"], ["p oracle", "p_oracle"]];
    if (weak) cols.push(["strongvalid", "strongvalid"], ["weakin", "weakin"], ["weakva", "weakva"]);
    const head = "<tr><th>method</th>" + cols.map(([h]) => `<th>${h}</th>`).join("") + "</tr>";
    const body = r.methods.map((m) =>
      `<tr><td>${m.method}</td>` + cols.map(([, k]) => `<td>${fmt(m[k], 3)}</td>`).join("") + "</tr>");
    $("mc-table").innerHTML = head + body.join("");
  });
}

async function main() {
  await init();
  const options = JSON.parse(designs()).map((d) => `<option>${d}</option>`).join("");
  $("sel-design").innerHTML = options;
  $("mc-design").innerHTML = options;
  $("sel-run").addEventListener("click", runSelection);
  $("mc-run").addEventListener("click", runSimulation);
  $("k").addEventListener("input", () => view && renderK());
  runSelection();
}

main().catch((e) => {
  $("sel-status").className = "err";
  $("sel-status").textContent = `failed to load the WebAssembly module: ${e}`;
});
