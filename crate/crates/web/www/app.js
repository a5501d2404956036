import init, { Demo } from "./pkg/gprompt_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const colors = { full: "#1f77b4", no_graph: "#d62728", no_gate: "#2ca02c" };

let demo = null;
const curves = new Map();

// let the status text paint before a blocking call
const later = (f) => new Promise((resolve) => setTimeout(() => resolve(f()), 20));

function show(el, text, status = false) {
  el.textContent = text;
  el.className = status ? "status" : "";
}

function drawLosses() {
  const c = $("loss");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const all = [...curves.values()].flat();
  if (!all.length) return;
  const lo = Math.min(...all), hi = Math.max(...all);
  const pad = 30;
  const longest = Math.max(...[...curves.values()].map((v) => v.length));
  g.fillStyle = "#666";
  g.fillText(hi.toFixed(2), 2, pad - 4);
  g.fillText(lo.toFixed(2), 2, c.height - 6);
  g.fillText("epoch " + longest, c.width - 60, c.height - 6);
  let row = 0;
  for (const [name, losses] of curves) {
    g.strokeStyle = colors[name];
    g.beginPath();
    losses.forEach((l, i) => {
      const x = pad + ((c.width - 2 * pad) * i) / Math.max(1, longest - 1);
      const y = pad + ((c.height - 2 * pad) * (hi - l)) / Math.max(1e-12, hi - lo);
      i ? g.lineTo(x, y) : g.moveTo(x, y);
    });
    g.stroke();
    g.fillStyle = colors[name];
    g.fillText(name, c.width - 80, pad + 14 * row++);
  }
}

async function generate() {
  show($("summary"), "generating...", true);
  curves.clear();
  $("acc").tBodies[0].innerHTML = "";
  drawLosses();
  try {
    demo = await later(() => new Demo(num("seed"), num("nodes"), num("p_in"), num("p_out"), num("lambda")));
    const s = JSON.parse(demo.summary());
    show(
      $("summary"),
      `${s.nodes} nodes, ${s.edges} edges (mean degree ${s.mean_degree.toFixed(2)}), ${s.topics} topics, ${s.vocab} tokens\n` +
        `${s.train_records} training masks, ${s.heldout_records} masks on held-out nodes\n` +
        `held-out top-1 from the node's own state: ${s.context_accuracy.toFixed(3)}\n` +
        `held-out top-1 of the Bayes oracle:       ${s.oracle_accuracy.toFixed(3)}`,
    );
  } catch (e) {
    demo = null;
    show($("summary"), "error: " + e, true);
  }
}

async function train(ablation) {
  if (!demo) return show($("train-status"), "generate a graph first", true);
  show($("train-status"), `training ${ablation}...`, true);
  try {
    const r = JSON.parse(await later(() => demo.train(ablation, num("epochs"))));
    curves.set(ablation, r.losses);
    drawLosses();
    const body = $("acc").tBodies[0];
    let tr = [...body.rows].find((row) => row.cells[0].textContent === ablation);
    if (!tr) tr = body.insertRow();
    tr.innerHTML = `<td>${ablation}</td><td>${r.heldout_accuracy.toFixed(3)}</td><td>${r.losses.at(-1).toFixed(4)}</td>`;
    show($("train-status"), "");
  } catch (e) {
    show($("train-status"), "error: " + e, true);
  }
}

async function zeroShot() {
  if (!demo) return show($("zs-out"), "generate a graph first", true);
  try {
    const r = JSON.parse(demo.zero_shot($("zs-ablation").value, num("topic"), $("tokens").value));
    const rows = r.top_tokens.map((t) => `  ${t.token.padEnd(14)} ${t.auc.toFixed(3)}`).join("\n");
    show($("zs-out"), `AUC of the vocab set: ${r.auc.toFixed(3)}\nmost separating single tokens:\n${rows}`);
  } catch (e) {
    show($("zs-out"), "error: " + e, true);
  }
}

await init();
$("gen").onclick = generate;
$("zs").onclick = zeroShot;
for (const b of document.querySelectorAll("button[data-ablation]")) b.onclick = () => train(b.dataset.ablation);
generate();
