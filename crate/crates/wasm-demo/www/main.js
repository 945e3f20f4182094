import init, { synthesis_preview, mask_preview, gaussian_metric_curves } from "./pkg/crr_wasm.js";

const $ = (id) => document.getElementById(id);

function blit(canvas, raster) {
  canvas.width = raster.width;
  canvas.height = raster.height;
  const data = new ImageData(new Uint8ClampedArray(raster.pixels), raster.width, raster.height);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

function drawCurve(canvas, points, xLabel, yLabel) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 10, w - pad - 10, h - pad - 10);
  ctx.fillText(xLabel, w / 2, h - 8);
  ctx.save();
  ctx.translate(10, h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(yLabel, 0, 0);
  ctx.restore();
  const px = (x) => pad + x * (w - pad - 10);
  const py = (y) => h - pad - y * (h - pad - 10);
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  points.forEach(([x, y], i) => (i ? ctx.lineTo(px(x), py(y)) : ctx.moveTo(px(x), py(y))));
  ctx.stroke();
}

function synth() {
  try {
    const r = synthesis_preview($("syn-class").value, 64, Number($("syn-seed").value), Number($("syn-beta").value));
    blit($("syn-canvas"), r);
    $("syn-note").textContent = r.note;
  } catch (e) {
    $("syn-note").textContent = String(e);
  }
}

function mask() {
  try {
    const grid = Number($("mask-grid").value);
    const r = mask_preview(grid, Number($("mask-ratio").value), Number($("mask-seed").value), Math.max(2, Math.floor(336 / grid)));
    blit($("mask-canvas"), r);
    $("mask-note").textContent = r.note;
  } catch (e) {
    $("mask-note").textContent = String(e);
  }
}

function curves() {
  try {
    const c = JSON.parse(gaussian_metric_curves(Number($("cur-n").value), Number($("cur-a").value), Number($("cur-sep").value), Number($("cur-seed").value)));
    drawCurve($("roc"), c.roc, "false positive rate", "true positive rate");
    drawCurve($("pr"), c.pr, "recall", "precision");
    $("cur-note").textContent = `AUROC ${c.auroc.toFixed(3)}  AP ${c.ap.toFixed(3)}  F1-max ${c.f1_max.toFixed(3)}`;
  } catch (e) {
    $("cur-note").textContent = String(e);
  }
}

await init();
for (const id of ["syn-class", "syn-seed", "syn-beta"]) $(id).addEventListener("input", synth);
for (const id of ["mask-grid", "mask-ratio", "mask-seed"]) $(id).addEventListener("input", mask);
for (const id of ["cur-sep", "cur-n", "cur-a", "cur-seed"]) $(id).addEventListener("input", curves);
synth();
mask();
curves();
