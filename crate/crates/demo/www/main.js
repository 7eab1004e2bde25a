import init, { phc_weight, param_table, render_sample } from "./pkg/phcnet_demo.js";

const $ = (id) => document.getElementById(id);

// Draws a grid into a canvas, scaled up with nearest-neighbour sampling.
function draw(canvas, grid, color) {
  const { rows, cols } = grid;
  const data = grid.data();
  const img = new ImageData(cols, rows);
  for (let i = 0; i < data.length; i++) {
    const [r, g, b] = color(data[i]);
    img.data.set([r, g, b, 255], 4 * i);
  }
  const tmp = new OffscreenCanvas(cols, rows);
  tmp.getContext("2d").putImageData(img, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function weight() {
  const n = +$("w-n").value;
  const c = +$("w-c").value;
  try {
    const g = phc_weight(n, c, c, BigInt($("w-seed").value), $("w-random").checked);
    const d = g.data();
    const m = Math.max(...d.map(Math.abs)) || 1;
    // blue negative, red positive
    draw($("w-canvas"), g, (v) => {
      const t = Math.round(255 * Math.abs(v) / m);
      return v < 0 ? [255 - t, 255 - t, 255] : [255, 255 - t, 255 - t];
    });
    $("w-msg").textContent = `${c}x${c} weight from ${n} blocks of ${c / n}x${c / n}`;
    $("w-msg").className = "";
  } catch (e) {
    $("w-msg").textContent = e;
    $("w-msg").className = "err";
  }
}

function params() {
  const rows = JSON.parse(param_table(+$("p-width").value, +$("p-blocks").value));
  const body = rows
    .map((r) => `<tr><td>${r.n}</td><td>${r.phc.toLocaleString()}</td><td>${r.real.toLocaleString()}</td><td>${r.ratio.toFixed(3)}</td></tr>`)
    .join("");
  $("p-table").innerHTML = `<tr><th>n</th><th>PHC</th><th>real</th><th>ratio</th></tr>${body}`;
}

function sample() {
  const xor = $("s-rule").value === "xor";
  const r = render_sample(xor, 32, BigInt($("s-seed").value));
  draw($("s-canvas"), r.grid(), (v) => {
    const t = Math.round(255 * Math.min(1, Math.max(0, v)));
    return [t, t, t];
  });
  $("s-msg").textContent = `views 1 and 2, label ${r.label()}`;
}

await init();
for (const id of ["w-n", "w-c", "w-seed", "w-random"]) $(id).addEventListener("input", weight);
for (const id of ["p-width", "p-blocks"]) $(id).addEventListener("input", params);
for (const id of ["s-rule", "s-seed"]) $(id).addEventListener("input", sample);
weight();
params();
sample();
