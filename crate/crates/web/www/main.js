import init, { previewPrompt, gapStatistic, nullDistribution } from "./pkg/claimaudit_web.js";

const $ = (id) => document.getElementById(id);

function cells() {
  return ["hm", "hw", "lm", "lw"].map((id) =>
    Float64Array.from($(id).value.split(",").map((s) => s.trim()).filter((s) => s !== "").map(Number)));
}

function show(el, text, isError = false) {
  el.textContent = text;
  el.className = isError ? "err" : "";
}

function render() {
  try {
    const r = JSON.parse(previewPrompt(Number($("variant").value), $("gender").value, $("claim").value, $("reply").value));
    $("prompt-out").textContent = r.prompt;
    const verdict = r.rating !== null ? `rating ${r.rating}` : r.refusal ? "refusal (retried during collection)" : "no rating found (retried during collection)";
    show($("parse-out"), `Parsed reply: ${verdict}`);
  } catch (e) {
    show($("parse-out"), e.message, true);
  }
}

function gap() {
  try {
    show($("gap-out"), `Gap statistic: ${gapStatistic(...cells()).toFixed(4)}`);
  } catch (e) {
    show($("gap-out"), e.message, true);
  }
}

function boot() {
  const hist = $("hist");
  hist.replaceChildren();
  try {
    const d = JSON.parse(nullDistribution(...cells(), Number($("iters").value), Number($("seed").value), 30));
    show($("boot-out"), `Observed ${d.observed.toFixed(4)}; p = ${d.p_value.toFixed(4)} over ${d.iterations} resamples (red bins lie at or above the observed value)`);
    const peak = Math.max(...d.counts, 1);
    d.counts.forEach((c, i) => {
      const bar = document.createElement("div");
      bar.style.height = `${(100 * c) / peak}%`;
      bar.title = `[${d.bin_edges[i].toFixed(3)}, ${d.bin_edges[i + 1].toFixed(3)}): ${c}`;
      if (d.bin_edges[i + 1] > d.observed) bar.className = "over";
      hist.appendChild(bar);
    });
  } catch (e) {
    show($("boot-out"), e.message, true);
  }
}

await init();
$("render").addEventListener("click", render);
$("gap").addEventListener("click", gap);
$("boot").addEventListener("click", boot);
render();
gap();
