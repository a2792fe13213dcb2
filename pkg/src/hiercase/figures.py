"""Figure rendering for report directories.

Every helper writes one PNG next to the delimited report it illustrates
and returns the path it wrote. Rendering is headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_training_curves(log: list[dict], path: str) -> str:
    epochs = [r["epoch"] for r in log]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r["train_loss"] for r in log], label="train loss")
    ax.plot(epochs, [r["valid_loss"] for r in log], label="valid loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r["valid_f1"] for r in log], color="tab:green",
             linestyle="--", label="valid F1")
    ax2.set_ylabel("valid F1")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right")
    ax.set_title("training progress")
    return _save(fig, path)


def save_eval_breakdown(report_dict: dict, path: str) -> str:
    per_class = report_dict.get("per_class", {})
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 4))
    names = ["precision", "recall", "f1", "token_accuracy"]
    left.bar(names, [report_dict[n] for n in names], color="tab:blue")
    left.set_ylim(0, 1.05)
    left.set_title("overall")
    left.tick_params(axis="x", rotation=20)
    if per_class:
        classes = sorted(per_class)
        right.bar(classes, [per_class[c]["accuracy"] for c in classes],
                  color="tab:orange")
        right.set_ylim(0, 1.05)
        right.set_title("accuracy by word class")
    return _save(fig, path)


def save_bench_chart(bench_dict: dict, path: str) -> str:
    entries = bench_dict["entries"]
    names = [e["name"] for e in entries]
    tps = [e["tokens_per_second"] for e in entries]
    fig, ax = plt.subplots(figsize=(7, 0.9 * len(names) + 1.5))
    ax.barh(names, tps, color="tab:purple")
    ax.set_xlabel("tokens per second")
    ax.set_title(f"throughput (reference: {bench_dict['reference']})")
    ax.invert_yaxis()
    for i, v in enumerate(tps):
        ax.text(v, i, f" {v:,.0f}", va="center")
    return _save(fig, path)


def save_lm_chart(result: dict, path: str) -> str:
    arms = result["arms"]
    names = list(arms)
    ppl = [arms[n]["perplexity"] for n in names]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, ppl, color="tab:red")
    ax.set_ylabel("perplexity")
    ax.set_title(f"downstream LM perplexity (seed {result['seed']})")
    ax.tick_params(axis="x", rotation=20)
    for i, v in enumerate(ppl):
        ax.text(i, v, f"{v:.1f}", ha="center", va="bottom")
    return _save(fig, path)


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
