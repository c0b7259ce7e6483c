import init, { noisy_trace, wavefield, invert } from "./pkg/gogn_fwi_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function drawLines(canvas, series, colors, { log = false } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const f = (v) => (log ? Math.log10(Math.max(v, 1e-16)) : v);
  let lo = Infinity, hi = -Infinity;
  for (const s of series) for (const v of s) { lo = Math.min(lo, f(v)); hi = Math.max(hi, f(v)); }
  if (log) lo = Math.max(lo, hi - 16);
  if (hi === lo) hi = lo + 1;
  series.forEach((s, k) => {
    ctx.strokeStyle = colors[k];
    ctx.beginPath();
    s.forEach((v, i) => {
      const x = (i / (s.length - 1)) * (w - 4) + 2;
      const y = h - 2 - ((Math.max(f(v), lo) - lo) / (hi - lo)) * (h - 4);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
  });
}

// values are row-major with y fastest; y points up on screen
function drawGrid(canvas, values, nx, ny, range) {
  const img = new ImageData(nx, ny);
  for (let ix = 0; ix < nx; ix++) {
    for (let iy = 0; iy < ny; iy++) {
      const t = Math.max(-1, Math.min(1, values[ix * ny + iy] / range));
      const p = 4 * ((ny - 1 - iy) * nx + ix);
      img.data[p] = t > 0 ? 255 : 255 * (1 + t);
      img.data[p + 1] = 255 * (1 - Math.abs(t));
      img.data[p + 2] = t < 0 ? 255 : 255 * (1 - t);
      img.data[p + 3] = 255;
    }
  }
  const off = new OffscreenCanvas(nx, ny);
  off.getContext("2d").putImageData(img, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

const maxAbs = (a) => a.reduce((m, v) => Math.max(m, Math.abs(v)), 0) || 1;

function runNoise() {
  const t = noisy_trace(num("nz-f"), num("nz-sigma"), num("nz-seed"), 150);
  drawLines($("nz-trace"), [t.clean, t.noisy], ["black", "red"]);
  drawLines($("nz-spec"), [t.clean_spectrum, t.noise_spectrum], ["black", "red"], { log: true });
}

let snaps = null;
function showFrame() {
  if (!snaps) return;
  const f = snaps.frame(num("wv-frame"));
  drawGrid($("wv-field"), f, snaps.nx, snaps.ny, 0.3 * maxAbs(f));
}

function runWave() {
  $("wave-status").textContent = "running...";
  setTimeout(() => {
    const t0 = performance.now();
    snaps = wavefield(64, num("wv-cap"), num("wv-x"), num("wv-y"), 0.1);
    drawGrid($("wv-model"), snaps.model, snaps.nx, snaps.ny, num("wv-cap"));
    $("wv-frame").max = snaps.count - 1;
    showFrame();
    $("wave-status").textContent = `${snaps.count} frames in ${(performance.now() - t0).toFixed(0)} ms`;
  }, 0);
}

function runInversion() {
  $("inv-status").textContent = "running...";
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const r = invert($("inv-opt").value, 48, num("inv-n"), num("inv-budget"), num("inv-seed"));
      const range = maxAbs(r.target);
      drawGrid($("inv-target"), r.target, r.nx, r.ny, range);
      drawGrid($("inv-model"), r.model, r.nx, r.ny, range);
      drawLines($("inv-curve"), [r.model_error], ["blue"]);
      const err = r.model_error[r.model_error.length - 1];
      const solves = r.solves[r.solves.length - 1];
      $("inv-status").textContent =
        `${r.status}: model error ${err.toFixed(3)} after ${solves} solves (${((performance.now() - t0) / 1000).toFixed(1)} s)`;
    } catch (e) {
      $("inv-status").textContent = String(e);
    }
  }, 0);
}

await init();
$("nz-run").onclick = runNoise;
$("wv-run").onclick = runWave;
$("wv-frame").oninput = showFrame;
$("inv-run").onclick = runInversion;
runNoise();
runWave();
