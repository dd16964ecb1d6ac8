from jinja2 import BaseLoader, Environment

from cdp_lab.harness.output import RunSummary

SUMMARY_TEMPLATE = """\
# {{ kind }} run

{{ successes }} of {{ outcomes | length }} seeds succeeded (cdp_lab {{ version }}).

| seed | success | value source | episodes | iterations | suboptimality | failure |
| ---- | ------- | ------------ | -------- | ---------- | ------------- | ------- |
{% for o in outcomes -%}
| {{ o.seed }} | {{ "yes" if o.success else "no" }} | {{ o.value_source or "-" }} \
| {{ fmt(o.metrics.get("episodes")) }} | {{ fmt(o.metrics.get("iterations")) }} \
| {{ fmt(o.metrics.get("suboptimality")) }} | {{ o.failure or "" }} |
{% endfor %}
{% if aggregates %}
## Aggregates

| metric | mean | min | max | seeds |
| ------ | ---- | --- | --- | ----- |
{% for name, stats in aggregates | dictsort -%}
| {{ name }} | {{ fmt(stats["mean"]) }} | {{ fmt(stats["min"]) }} | {{ fmt(stats["max"]) }} | {{ stats["count"] }} |
{% endfor %}
{% endif %}
## Environments

{% for o in outcomes -%}
- seed {{ o.seed }}: `{{ o.fingerprint or "n/a" }}`
{% endfor %}
"""


def _format(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float) and not value.is_integer():
        return f"{value:.6g}"
    return str(int(value)) if isinstance(value, float) else str(value)


def render_summary(summary: RunSummary) -> str:
    """Markdown report of a run, written next to summary.json"""
    template = Environment(loader=BaseLoader()).from_string(SUMMARY_TEMPLATE)
    return template.render(
        kind=summary.kind,
        version=summary.version,
        successes=summary.successes,
        outcomes=summary.outcomes,
        aggregates=summary.aggregates,
        fmt=_format,
    )
