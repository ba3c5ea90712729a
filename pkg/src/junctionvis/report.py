"""Regression report rendering (JSON and aligned plain text)."""

from __future__ import annotations

from .glm import MODEL_TERMS, GlmFit
from .pipeline import dumps, load_fits


def emit_report(fitted: dict, fmt: str = "json") -> bytes:
    """Render a fitted-stage payload."""
    if fmt == "json":
        return dumps({
            "models": fitted["fits"],
            "comparison": fitted.get("comparison"),
            "summary": fitted["summary"],
            "dataset": fitted.get("counts", {}),
        })
    if fmt == "text":
        return render_text(fitted).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def _fmt(v, spec: str = ".4f") -> str:
    if v is None:
        return "-"
    if isinstance(v, float) and (abs(v) >= 1e5 or (v != 0 and abs(v) < 1e-3)):
        return f"{v:.3e}"
    return format(v, spec)


def render_text(fitted: dict) -> str:
    fits: dict[str, GlmFit] = load_fits(fitted)
    names = list(fits)
    labels = [n.replace("_", " ").title() for n in names]
    lines = []
    w0, w = 22, 18

    lines.append("Regression Report")
    lines.append("=" * (w0 + w * len(names)))
    lines.append("Metric".ljust(w0) + "".join(lb.rjust(w) for lb in labels))
    lines.append("-" * (w0 + w * len(names)))
    rows = [
        ("Observations", lambda f: str(f.n_obs)),
        ("Df Residuals", lambda f: str(f.df_residual)),
        ("Link Function", lambda f: "Log"),
        ("Method", lambda f: "IRLS"),
        ("Log-Likelihood", lambda f: f"{f.log_likelihood:.1f}"),
        ("Deviance", lambda f: f"{f.deviance:.5g}"),
        ("Pearson chi2", lambda f: f"{f.pearson_chi2:.3g}"),
        ("No. Iterations", lambda f: str(f.iterations)),
        ("Converged", lambda f: "yes" if f.converged else "NO"),
        ("Pseudo R-squ. (CS)", lambda f: f"{f.pseudo_r2_cs:.4f}"),
    ]
    for label, get in rows:
        lines.append(label.ljust(w0) + "".join(get(fits[n]).rjust(w) for n in names))
    lines.append("")

    lines.append("Coefficients")
    lines.append("=" * (w0 + 2 * 11 * len(names)))
    lines.append("".ljust(w0) + "".join(lb.center(22) for lb in labels))
    lines.append("".ljust(w0) + "".join("Coef.".rjust(11) + "P>|z|".rjust(11) for _ in names))
    lines.append("-" * (w0 + 2 * 11 * len(names)))
    terms = [t for t in MODEL_TERMS["m2"]
             if any(t in f.params() or t in f.dropped_columns for f in fits.values())]
    for n in names:
        for c in fits[n].coefficients:
            if c.name not in terms:
                terms.append(c.name)
        for d in fits[n].dropped_columns:
            if d not in terms:
                terms.append(d)
    for term in terms:
        cells = []
        for n in names:
            coef = {c.name: c for c in fits[n].coefficients}.get(term)
            if coef is not None:
                cells.append(_fmt(coef.estimate).rjust(11) + f"{coef.p:.3f}".rjust(11))
            elif term in fits[n].dropped_columns:
                cells.append("(dropped)".rjust(11) + "".rjust(11))
            else:
                cells.append("".rjust(22))
        lines.append(term.ljust(w0) + "".join(cells))
    lines.append("")

    lines.append("Information criteria")
    lines.append("=" * (w0 + 3 * w))
    lines.append("Model".ljust(w0) + "AIC".rjust(w) + "BIC (deviance)".rjust(w) + "BIC (-2LL+k ln n)".rjust(w))
    for n, lb in zip(names, labels):
        f = fits[n]
        lines.append(lb.ljust(w0) + f"{f.aic:.2f}".rjust(w) + f"{f.bic_deviance:.2f}".rjust(w)
                     + f"{f.bic_standard:.2f}".rjust(w))
    comp = fitted.get("comparison")
    if comp:
        lines.append(f"delta AIC (1 - 2): {comp['delta_aic']:.2f}   "
                     f"delta BIC deviance (1 - 2): {comp['delta_bic_deviance']:.2f}   "
                     f"preferred: {comp['preferred']}")
    lines.append("")

    summ = fitted["summary"]
    lines.append(f"Dataset summary (n = {summ['n']})")
    lines.append("=" * (w0 + 3 * w))
    lines.append("Variable".ljust(w0) + "Range".rjust(w + 8) + "Mean".rjust(w - 4) + "SD".rjust(w - 4))
    for var in ("accident_count", "visible_percentage", "max_speed", "traffic"):
        s = summ.get(var)
        if not s:
            continue
        rng = f"{_fmt(s['min'], '.2f')}-{_fmt(s['max'], '.2f')}"
        lines.append(var.ljust(w0) + rng.rjust(w + 8) + _fmt(s["mean"], ".2f").rjust(w - 4)
                     + _fmt(s["sd"], ".2f").rjust(w - 4))
    rt = summ["road_type"]
    lines.append("road_type".ljust(w0)
                 + f"primary ({100 * rt['primary']:.2f}%), secondary ({100 * rt['secondary']:.2f}%)".rjust(w + 8))
    return "\n".join(lines) + "\n"
