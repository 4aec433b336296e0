import init, { Demo } from "./pkg/rcpn_web.js";

const $ = (id) => document.getElementById(id);
let demo;

function paint(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d");
  if (rgba.length === 0) {
    ctx.fillStyle = "#eee";
    ctx.fillRect(0, 0, w, h);
    return;
  }
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function outlineAmbiguous(canvas) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / demo.cells_x();
  ctx.strokeStyle = "rgba(0,0,0,0.8)";
  ctx.lineWidth = 0.6;
  for (const c of demo.ambiguous_cells()) {
    const x = (c % demo.cells_x()) * cell;
    const y = Math.floor(c / demo.cells_x()) * cell;
    ctx.strokeRect(x + 0.5, y + 0.5, cell - 1, cell - 1);
  }
}

function showScene() {
  const w = demo.width(), h = demo.height();
  paint($("image"), demo.image_rgba(), w, h);
  paint($("truth"), demo.truth_rgba(), w, h);
  outlineAmbiguous($("truth"));
  showPredictions();
  drawTree();
}

function showPredictions() {
  const w = demo.width(), h = demo.height();
  for (const [id, ctx] of [["pred-context", true], ["pred-local", false]]) {
    paint($(id), demo.label_rgba(ctx), w, h);
    if (demo.trained()) outlineAmbiguous($(id));
  }
}

function drawTree() {
  const canvas = $("tree");
  const ctx = canvas.getContext("2d");
  const w = demo.width(), h = demo.height();
  const img = document.createElement("canvas");
  paint(img, demo.image_rgba(), w, h);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);

  const tree = JSON.parse(demo.parse_tree(BigInt($("tree-seed").value), $("balanced").checked));
  const scale = canvas.width / demo.cells_x();
  const leaves = tree.leaves;
  ctx.lineWidth = 2;
  tree.nodes.forEach((n, i) => {
    if (n.parent < 0) return;
    const p = tree.nodes[n.parent];
    ctx.strokeStyle = `hsl(${(220 * n.size) / leaves}, 70%, 35%)`;
    ctx.beginPath();
    ctx.moveTo(n.x * scale, n.y * scale);
    ctx.lineTo(p.x * scale, p.y * scale);
    ctx.stroke();
  });
  tree.nodes.forEach((n, i) => {
    ctx.fillStyle = i < leaves ? "#fff" : "#000";
    ctx.beginPath();
    ctx.arc(n.x * scale, n.y * scale, i < leaves ? 4 : 3 + (5 * n.size) / leaves, 0, 2 * Math.PI);
    ctx.fill();
    ctx.stroke();
  });
  $("tree-info").textContent = `depth ${tree.depth}, ${leaves} leaves, ${leaves - 1} merges`;
}

function pct(v) {
  return Number.isNaN(v) ? "n/a" : (100 * v).toFixed(0) + "%";
}

async function train() {
  const button = $("train");
  button.disabled = true;
  const chunk = 10;
  const total = Number($("epochs").value);
  demo.prepare_training(Number($("images").value), 1n);
  const lines = [];
  for (let done = 0; done < total; done += chunk) {
    const [c, l] = demo.train_chunk(Math.min(chunk, total - done));
    lines.push(
      `epoch ${String(done + chunk).padStart(4)}  loss context ${c.toFixed(3)} local ${l.toFixed(3)}` +
        `  ambiguous cells correct: context ${pct(demo.ambiguous_accuracy(true))}, local ${pct(demo.ambiguous_accuracy(false))}`
    );
    $("log").textContent = lines.join("\n");
    showPredictions();
    await new Promise((r) => setTimeout(r, 0));
  }
  button.disabled = false;
}

async function main() {
  await init();
  demo = new Demo(BigInt($("scene-seed").value), Number($("ambiguity").value));
  showScene();
  $("new-scene").onclick = () => {
    const seed = BigInt($("scene-seed").value);
    const amb = Number($("ambiguity").value);
    if (demo.trained()) {
      demo.new_scene(seed);
    } else {
      demo = new Demo(seed, amb);
    }
    showScene();
  };
  $("draw-tree").onclick = drawTree;
  $("train").onclick = train;
}

main();
