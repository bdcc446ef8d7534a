"""Nested solver/preconditioner/smoother parameter lists.

String-pair configuration API: values are stored as strings and typed
on read.  Unknown keys are rejected when added; parse errors surface at
finalize (``set_defaults``) so configurations can be built
incrementally.  Method/role legality follows the solver-combination
matrix (which method may act as solver, preconditioner, or smoother).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError

__all__ = ["ParamList", "ParamTree", "ROLES", "METHOD_FAMILIES", "LEGAL_ROLES",
           "method_schema", "legality_table"]

ROLES = ("solver", "preconditioner", "pre_smoother", "post_smoother")
SMOOTHER_ROLES = ("pre_smoother", "post_smoother")

#: BiCGStab recurrence variants all share the BiCGStab row of the
#: legality matrix.
METHOD_FAMILIES = {
    "CG": "CG",
    "BiCGStab": "BiCGStab",
    "RBiCGStab": "BiCGStab",
    "PBiCGStab": "BiCGStab",
    "MultiGrid": "MultiGrid",
    "Jacobi": "Jacobi",
    "Gauss-Seidel": "Gauss-Seidel",
    "Chebyshev": "Chebyshev",
    "Direct": "Direct",
}

#: method family -> roles in which it may legally appear
LEGAL_ROLES = {
    "CG": {"solver"},
    "BiCGStab": {"solver", "preconditioner", "pre_smoother", "post_smoother"},
    "MultiGrid": {"solver", "preconditioner"},
    "Jacobi": {"solver", "preconditioner", "pre_smoother", "post_smoother"},
    "Gauss-Seidel": {"solver", "preconditioner", "pre_smoother", "post_smoother"},
    "Chebyshev": {"preconditioner", "pre_smoother", "post_smoother"},
    "Direct": {"solver"},
}

#: role-dependent default iteration counts: a preconditioner defaults to
#: one application, smoothers to one sweep, a standalone solver to 100.
_MAX_ITERS_DEFAULT = {
    "solver": "100",
    "preconditioner": "1",
    "pre_smoother": "1",
    "post_smoother": "1",
}

_COMMON = {"max_iters": int, "rel_tolerance": float}
_COMMON_DEFAULTS = {"rel_tolerance": "1e-8"}

_SCHEMAS: dict[str, dict[str, type]] = {
    "CG": dict(_COMMON),
    "BiCGStab": dict(_COMMON, merged=int),
    "RBiCGStab": dict(_COMMON, merged=int),
    "PBiCGStab": dict(_COMMON, merged=int),
    "MultiGrid": dict(
        _COMMON,
        mg_strength_threshold=float,
        mg_agg_num_levels=int,
        mg_num_paths=int,
        mg_coarse_matrix_size=int,
        mg_max_levels=int,
        mg_mixed_precision=int,
        mg_cycle=str,
    ),
    "Jacobi": dict(_COMMON, weight=float),
    "Gauss-Seidel": dict(_COMMON, direction=str),
    "Chebyshev": dict(_COMMON, polynomial_order=int),
    "Direct": {},
}

_DEFAULTS: dict[str, dict[str, str]] = {
    "CG": dict(_COMMON_DEFAULTS),
    "BiCGStab": dict(_COMMON_DEFAULTS, merged="0"),
    "RBiCGStab": dict(_COMMON_DEFAULTS, merged="0"),
    "PBiCGStab": dict(_COMMON_DEFAULTS, merged="0"),
    "MultiGrid": dict(
        _COMMON_DEFAULTS,
        mg_strength_threshold="0.25",
        mg_agg_num_levels="0",
        mg_num_paths="1",
        mg_coarse_matrix_size="500",
        mg_max_levels="25",
        mg_mixed_precision="0",
        mg_cycle="V",
    ),
    "Jacobi": dict(_COMMON_DEFAULTS, weight="1.0"),
    "Gauss-Seidel": dict(_COMMON_DEFAULTS, direction="symmetric"),
    "Chebyshev": dict(_COMMON_DEFAULTS, polynomial_order="2"),
    "Direct": {},
}


def method_schema(method: str) -> dict[str, type]:
    if method not in _SCHEMAS:
        raise ConfigurationError(f"unknown method {method!r}")
    return _SCHEMAS[method]


def schema_report() -> str:
    """Human-readable dump of every method: legal roles, keys, defaults."""
    lines = []
    for method in _SCHEMAS:
        family = METHOD_FAMILIES[method]
        roles = ", ".join(r for r in ROLES if r in LEGAL_ROLES[family])
        lines.append(f"{method}  (roles: {roles})")
        schema = _SCHEMAS[method]
        if not schema:
            lines.append("    (no parameters)")
        for key, typ in schema.items():
            default = _DEFAULTS[method].get(key)
            if key == "max_iters":
                default = "100 (solver) / 1 (other roles)"
            lines.append(f"    {key:<24} {typ.__name__:<6} default {default}")
        lines.append("")
    return "\n".join(lines)


def legality_table() -> dict[tuple[str, str], bool]:
    """Full (family, role) -> legal mapping (7 methods x 4 roles)."""
    return {
        (fam, role): role in allowed
        for fam, allowed in LEGAL_ROLES.items()
        for role in ROLES
    }


@dataclass
class ParamList:
    """Parameters of one method in one role (string key/value pairs)."""

    method: str
    entries: dict[str, str] = field(default_factory=dict)

    def set(self, key: str, value):
        schema = method_schema(self.method)
        if key not in schema:
            raise ConfigurationError(
                f"method {self.method!r} has no parameter {key!r}"
            )
        self.entries[key] = str(value)

    def _parse(self, key: str):
        typ = method_schema(self.method)[key]
        raw = self.entries[key]
        try:
            if typ is int:
                return int(raw)
            if typ is float:
                return float(raw)
            return raw
        except ValueError as exc:
            raise ConfigurationError(
                f"parameter {key!r} of {self.method!r}: cannot parse {raw!r} as {typ.__name__}"
            ) from exc

    def get_int(self, key: str) -> int:
        return int(self._parse(key))

    def get_float(self, key: str) -> float:
        return float(self._parse(key))

    def get_str(self, key: str) -> str:
        return str(self._parse(key))


class ParamTree:
    """Build-then-freeze parameter tree over the four roles."""

    def __init__(self):
        self.roles: dict[str, ParamList] = {}
        self.finalized = False

    # -- construction ----------------------------------------------------
    def _check_mutable(self):
        if self.finalized:
            raise ConfigurationError("parameter tree is finalized")

    def add(self, role: str, key: str, value=None):
        """Add one key/value pair (later writes to the same key win)."""
        self._check_mutable()
        if role not in ROLES:
            raise ConfigurationError(
                f"unknown role {role!r}; roles are {', '.join(ROLES)}"
            )
        if value is None and isinstance(key, (tuple, list)):
            key, value = key
        if key == "method":
            method = str(value)
            if method not in METHOD_FAMILIES:
                raise ConfigurationError(f"unknown method {method!r}")
            existing = self.roles.get(role)
            if existing is not None and existing.method != method:
                # method switch keeps only keys the new schema accepts
                kept = {
                    k: v for k, v in existing.entries.items()
                    if k in method_schema(method)
                }
                self.roles[role] = ParamList(method, kept)
            elif existing is None:
                self.roles[role] = ParamList(method)
            return
        if role not in self.roles:
            raise ConfigurationError(
                f"set {role}/method before adding parameter {key!r}"
            )
        self.roles[role].set(key, value)

    def add_map(self, role: str, mapping):
        """Add several pairs; "method" is applied first when present."""
        items = dict(mapping)
        if "method" in items:
            self.add(role, "method", items.pop("method"))
        for key, value in items.items():
            self.add(role, key, value)

    # -- finalize ----------------------------------------------------------
    def set_defaults(self):
        """Fill every unset parameter with its default and freeze the tree."""
        self._check_mutable()
        if "solver" not in self.roles:
            raise ConfigurationError("no solver method configured")
        for role, plist in self.roles.items():
            for key in plist.entries:
                plist._parse(key)  # surface parse errors now
            defaults = dict(_DEFAULTS[plist.method])
            if "max_iters" in method_schema(plist.method):
                defaults.setdefault("max_iters", _MAX_ITERS_DEFAULT[role])
            for key, value in defaults.items():
                plist.entries.setdefault(key, value)
        self.finalized = True

    # -- queries ------------------------------------------------------------
    def role(self, role: str) -> ParamList | None:
        return self.roles.get(role)

    def validate(self) -> list[str]:
        """Method/role legality and schema conformance; returns violations."""
        if not self.finalized:
            raise ConfigurationError("validate requires a finalized tree")
        violations = []
        for role, plist in self.roles.items():
            family = METHOD_FAMILIES[plist.method]
            if role not in LEGAL_ROLES[family]:
                violations.append(
                    f"method {plist.method!r} is not legal in role {role!r}"
                )
            schema = method_schema(plist.method)
            for key in plist.entries:
                if key not in schema:
                    violations.append(
                        f"{role}/{plist.method}: unknown parameter {key!r}"
                    )
        return violations

    def __eq__(self, other):
        if not isinstance(other, ParamTree):
            return NotImplemented
        return self.finalized == other.finalized and {
            r: (p.method, p.entries) for r, p in self.roles.items()
        } == {r: (p.method, p.entries) for r, p in other.roles.items()}
