"""Flat text configuration: one ``section.key = value`` assignment per line.

Grammar
-------
* blank lines and lines starting with ``#`` are skipped;
* everything after `` #`` (hash preceded by whitespace) is a comment;
* keys are dotted paths with at least one dot (``system.N``), assignments
  nest into sections;
* values parse as ``true``/``false``, int, float, quoted string, bare
  string, or a comma-separated list of those; a trailing comma marks a
  one-element list (``lengths = 3.14,``).

Schema
------
The known keys, grouped by section.  ``interaction.params.*`` is free-form
because each interaction kind takes its own parameters.

scenario.name             one of the names in scenarios.SCENARIO_NAMES
system.N                  particle count                       (int, 3)
system.d                  spatial dimension                     (int, 1)
system.delta              coupling 1/(2h); 0 is the hard wall   (float, 1e-3)
system.transverse_offsets initial transverse positions, N values per
                          transverse axis (flat list, optional)
confinement.alpha         wall steepness exponent               (float, 4)
confinement.lengths       box side lengths, d values            (list, [pi])
interaction.kind          pair potential kind (see model)       (str)
interaction.rho           collision core radius                 (float, 0)
interaction.params.*      kind-specific parameters              (float)
run.amplitude             initial perturbation size             (float, 0)
run.horizon_periods       horizon in fast periods               (float, 1000)
run.seed                  RNG seed for multi-starts             (int, 0)
run.dt                    splitting step                        (float, 5e-3)
run.method                integrator method name               (str, auto)
run.dv_fraction           per-substep potential-change bound    (float, 1e-3)
run.shadow_rel_tol        per-substep splitting-offset bound    (float, 4e-7)
run.samples               observer samples over the horizon     (int, 8192)
run.check_frequency       gate on measured vs predicted peaks   (bool, true)
run.relax_xi              relax transverse offsets to the local
                          minimum before the run                (bool, auto)
run.max_artifact_samples  sampled records kept in the output    (int, 512)
average.n                 table rows over [0, 2pi)              (int, 64)
average.zeta              transverse separation for the table   (float, 0)
average.derivs            highest derivative column, <= 4       (int, 2)
minimize.seed             multi-start seed override             (int)
minimize.n_starts         multi-start cap                       (int)
nondeg.n_draws            random identity draws                 (int, 100)
nondeg.seed               draw seed                             (int, 0)
billiard.semi_axes        domain semi-axes                      (list, [2,1])
billiard.power            superellipse exponent, 2 = ellipse    (int, 2)
billiard.k                bounce count                          (int, 2)
billiard.hint             starting boundary parameters          (list)
billiard.seeds            ring starts when no hint is given     (int, 6)
scaling.vartheta          phase separation probed               (float, pi)
scaling.zeta              transverse separation probed          (float, 0)
scaling.delta             single-point probe coupling           (float)
scaling.deltas            full-sweep couplings, >= 3 decades    (list)
scaling.grid_size         path grid size                        (int, 20000)
scaling.n_tab             quadrature table size                 (int, 20000)
scaling.fd_h              stencil step for the 4th derivative   (float, 0.05)
scaling.fd_levels         Richardson levels                     (int, 3)
sweep.grid.<key>          list of values for any key above
"""

from __future__ import annotations

import json


class ConfigError(ValueError):
    """Malformed configuration text or an out-of-schema key."""


_MISSING = object()

#: exact dotted keys, or prefixes ending in ".*" that admit any suffix
KNOWN_KEYS = frozenset({
    "scenario.name",
    "system.N", "system.d", "system.delta", "system.transverse_offsets",
    "confinement.alpha", "confinement.lengths",
    "interaction.kind", "interaction.rho", "interaction.params.*",
    "run.amplitude", "run.horizon_periods", "run.seed", "run.dt",
    "run.method", "run.samples", "run.check_frequency", "run.relax_xi",
    "run.max_artifact_samples", "run.dv_fraction", "run.shadow_rel_tol",
    "average.n", "average.zeta", "average.derivs",
    "minimize.seed", "minimize.n_starts",
    "nondeg.n_draws", "nondeg.seed",
    "billiard.semi_axes", "billiard.power", "billiard.k", "billiard.hint",
    "billiard.seeds",
    "scaling.vartheta", "scaling.zeta", "scaling.delta", "scaling.deltas",
    "scaling.grid_size", "scaling.n_tab", "scaling.fd_h", "scaling.fd_levels",
    "sweep.grid.*", "sweep.threads",
})


def key_known(dotted: str) -> bool:
    if dotted in KNOWN_KEYS:
        return True
    parts = dotted.split(".")
    for i in range(1, len(parts)):
        if ".".join(parts[:i]) + ".*" in KNOWN_KEYS:
            return True
    return False


def _parse_scalar(tok: str):
    tok = tok.strip()
    if len(tok) >= 2 and tok[0] == tok[-1] and tok[0] in "'\"":
        return tok[1:-1]
    low = tok.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def _parse_value(raw: str):
    raw = raw.strip()
    if raw == "":
        raise ConfigError("empty value")
    if "," in raw:
        return [_parse_scalar(tok) for tok in raw.split(",") if tok.strip()]
    return _parse_scalar(raw)


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    in_quote = None
    for i, ch in enumerate(line):
        if in_quote:
            if ch == in_quote:
                in_quote = None
        elif ch in "'\"":
            in_quote = ch
        elif ch == "#" and i > 0 and line[i - 1] in " \t":
            return line[:i]
    return line


def parse_config(text: str) -> dict:
    """Parse configuration text into a nested dict of sections."""
    cfg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} has no section")
        parts = key.split(".")
        if not all(parts):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        node = cfg
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(
                    f"line {lineno}: {key!r} descends into scalar key")
            node = child
        leaf = parts[-1]
        if isinstance(node.get(leaf), dict):
            raise ConfigError(f"line {lineno}: {key!r} overwrites a section")
        try:
            node[leaf] = _parse_value(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


def flatten(cfg: dict, prefix: str = "") -> dict:
    """Nested sections to a flat {dotted key: leaf value} dict."""
    flat = {}
    for key, value in cfg.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def get(cfg: dict, dotted: str, default=_MISSING):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is _MISSING:
                raise KeyError(dotted)
            return default
        node = node[part]
    return node


def put(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        bare = value and not any(c in value for c in ",#'\"=") \
            and value == value.strip() and value.lower() not in ("true", "false")
        return value if bare else json.dumps(value)
    return repr(value)


def dump_config(cfg: dict) -> str:
    """Render a config dict back to parseable text (sorted keys)."""
    lines = []
    for dotted in sorted(flatten(cfg)):
        value = get(cfg, dotted)
        if isinstance(value, list):
            if not value:
                raise ConfigError(f"{dotted}: empty lists are not writable")
            text = ", ".join(_format_scalar(v) for v in value)
            if len(value) == 1:
                text += ","          # trailing comma marks a one-element list
        else:
            text = _format_scalar(value)
        lines.append(f"{dotted} = {text}")
    return "\n".join(lines) + "\n"


def validate_keys(cfg: dict) -> None:
    """Reject keys outside the documented schema."""
    unknown = [k for k in flatten(cfg) if not key_known(k)]
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
