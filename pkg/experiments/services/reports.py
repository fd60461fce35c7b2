import json
import logging
from pathlib import Path

from django.conf import settings

from ..serializers import RunReportSerializer

logger = logging.getLogger(__name__)

SUMMARY_FILE = 'summary.json'


def output_dir(config, out=None):
    """``--out``, else the config's output entry, else SCENARIO_OUTPUT_DIR/<scenario>."""
    if out:
        return Path(out)
    if config.get('output'):
        return Path(config['output'])
    return Path(getattr(settings, 'SCENARIO_OUTPUT_DIR', 'runs')) / config['scenario']


def summary_text(report):
    return json.dumps(RunReportSerializer(report).data, indent=2, sort_keys=True) + '\n'


def write_report(report, out):
    """One CSV per table, the text artifacts and summary.json. Returns the written paths."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in report.table_names:
        path = out / f"{name}.csv"
        report.tables[name].to_csv(path, index=False, float_format='%.12e', lineterminator='\n')
        paths.append(path)
    for name, text in sorted(report.artifacts.items()):
        path = out / name
        path.write_text(text, encoding='utf-8')
        paths.append(path)
    summary = out / SUMMARY_FILE
    summary.write_text(summary_text(report), encoding='utf-8')
    paths.append(summary)
    logger.info("Wrote %d files to %s", len(paths), out)
    return paths
