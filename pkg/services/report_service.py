import matplotlib
matplotlib.use('Agg')

import base64
import io
import logging
from io import BytesIO
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from django.core.cache import cache
from reportlab.lib.pagesizes import letter
from reportlab.lib.utils import ImageReader
from reportlab.pdfgen import canvas

from asr_app.models import ScoredRun, SpellerPass
from services.artifact_service import ArtifactService

logger = logging.getLogger(__name__)

CACHE_TIMEOUT = 60 * 15
RUN_FIELDS = ("system_name", "testset", "substitutions", "deletions", "insertions", "reference_length", "cer")
RELATIVE_COLUMN = "Rel. impr. (%)"


class ReportService:
    @staticmethod
    def fetch_runs(workspace=None):
        key = ArtifactService.workspace_key(workspace)
        runs = list(ScoredRun.objects.filter(workspace=key).order_by("testset", "system_name").values(*RUN_FIELDS))
        if not runs:
            logger.error(f"No scored runs to report for {key}")
            raise ValueError("no scored runs; run `score` first")
        return runs

    @staticmethod
    def fetch_passes(workspace=None):
        passes = SpellerPass.objects.filter(workspace=ArtifactService.workspace_key(workspace))
        return list(passes.order_by("run_name", "pass_index").values(
            "run_name", "training_data", "pass_index", "steps", "validation_cer",
        ))

    @staticmethod
    def relative_improvement(baseline_cer, system_cer):
        """Percent of the baseline CER removed, one decimal."""
        if baseline_cer <= 0:
            return None
        return round(100.0 * (baseline_cer - system_cer) / baseline_cer, 1)

    @staticmethod
    def comparison_table(runs, baseline=None):
        """
        One row per (test set, system). Test sets are ordered by the
        baseline's CER on them; the relative column appears only when a
        baseline is named and there is something to compare it with.
        """
        if not runs:
            raise ValueError("need at least one scored run")
        frame = pd.DataFrame(list(runs), columns=list(RUN_FIELDS))
        systems = set(frame["system_name"])
        if baseline is not None and baseline not in systems:
            logger.error(f"Unknown baseline {baseline!r}")
            raise ValueError(f"baseline {baseline!r} is not among the scored systems {sorted(systems)}")

        if baseline is not None:
            reference = frame[frame["system_name"] == baseline].set_index("testset")["cer"]
        else:
            reference = frame.groupby("testset")["cer"].mean()
        frame["order"] = frame["testset"].map(reference).fillna(np.inf)
        frame["is_baseline"] = frame["system_name"] == baseline
        frame = frame.sort_values(["order", "testset", "is_baseline", "system_name"], ascending=[True, True, False, True])

        table = pd.DataFrame({
            "Test set": frame["testset"],
            "System": frame["system_name"],
            "S": frame["substitutions"],
            "D": frame["deletions"],
            "I": frame["insertions"],
            "N": frame["reference_length"],
            "CER (%)": (100 * frame["cer"]).round(2),
        })
        if baseline is not None and len(systems) > 1:
            table[RELATIVE_COLUMN] = [
                ReportService.relative_improvement(reference.get(testset, 0.0), cer)
                for testset, cer in zip(frame["testset"], frame["cer"])
            ]
        return table.reset_index(drop=True)

    @staticmethod
    def pass_table(passes):
        """Rows per training data, validation CER (%) after every pass."""
        columns = ["Training data", "Steps/pass"]
        if not passes:
            return pd.DataFrame(columns=columns)
        frame = pd.DataFrame(list(passes))
        frame["cer"] = (100 * frame["validation_cer"].astype(float)).round(2)
        table = frame.pivot_table(
            index=["training_data", "steps"], columns="pass_index", values="cer", aggfunc="last",
        )
        table.columns = [f"Pass {int(k)}" for k in table.columns]
        table = table.reset_index().rename(columns={"training_data": "Training data", "steps": "Steps/pass"})
        return table

    @staticmethod
    def examples_table(references, decoded, corrected, limit=20):
        """Utterances whose corrected hypothesis differs from the decoder output."""
        rows = []
        for utt_id in references:
            if tuple(decoded[utt_id]) != tuple(corrected[utt_id]):
                rows.append({
                    "Utterance": utt_id,
                    "Reference": "".join(references[utt_id]),
                    "Decoder": "".join(decoded[utt_id]),
                    "Corrected": "".join(corrected[utt_id]),
                })
            if len(rows) >= limit:
                break
        return pd.DataFrame(rows, columns=["Utterance", "Reference", "Decoder", "Corrected"])

    @staticmethod
    def generate_graph(table):
        if table.empty:
            raise ValueError("Cannot generate graph without data")
        totals = table.groupby("System")[["S", "D", "I"]].sum()

        fig, ax = plt.subplots(figsize=(10, 5))
        positions = np.arange(len(totals))
        width = 0.25
        for offset, (column, label, color) in enumerate([
            ("S", "Substitutions", "red"), ("D", "Deletions", "blue"), ("I", "Insertions", "green"),
        ]):
            ax.bar(positions + (offset - 1) * width, totals[column], width, label=label, color=color)
        ax.set_xticks(positions)
        ax.set_xticklabels(totals.index, rotation=45, ha="right")
        ax.set_ylabel("Errors")
        ax.legend()
        plt.title("Error types per system")
        plt.grid(True, axis="y")
        plt.tight_layout()

        buffer = io.BytesIO()
        plt.savefig(buffer, format='png')
        buffer.seek(0)
        graph_base64 = base64.b64encode(buffer.getvalue()).decode('utf-8')
        plt.close(fig)
        buffer.close()
        return graph_base64

    @staticmethod
    def generate_json_report(baseline=None, workspace=None):
        cache_key = f"json_report_{baseline}_{ArtifactService.workspace_key(workspace)}"
        cached_report = cache.get(cache_key)
        if cached_report:
            return cached_report

        table = ReportService.comparison_table(ReportService.fetch_runs(workspace), baseline)
        report = {
            "baseline": baseline,
            "rows": table.replace({np.nan: None}).to_dict(orient="records"),
            "graph": ReportService.generate_graph(table),
        }
        cache.set(cache_key, report, timeout=CACHE_TIMEOUT)
        return report

    @staticmethod
    def generate_csv_report(baseline=None, workspace=None):
        table = ReportService.comparison_table(ReportService.fetch_runs(workspace), baseline)
        return table.to_csv(index=False, lineterminator="\n")

    @staticmethod
    def render_pdf(table, passes=None, title="Speller comparison report"):
        buffer = BytesIO()
        pdf = canvas.Canvas(buffer, pagesize=letter, invariant=1)
        pdf.setTitle(title)
        pdf.setFont("Helvetica-Bold", 18)
        pdf.drawString(60, 750, title)

        pdf.setFont("Courier", 8)
        y = 725
        for line in table.to_string(index=False).splitlines():
            pdf.drawString(60, y, line)
            y -= 11
            if y < 320:
                break
        if passes is not None and not passes.empty:
            y -= 11
            for line in passes.to_string(index=False).splitlines():
                pdf.drawString(60, y, line)
                y -= 11
                if y < 320:
                    break

        image = ImageReader(BytesIO(base64.b64decode(ReportService.generate_graph(table))))
        pdf.drawImage(image, 60, 60, width=480, height=240)
        pdf.showPage()
        pdf.save()
        buffer.seek(0)
        return buffer.getvalue()

    @staticmethod
    def generate_pdf_report(baseline=None, workspace=None):
        cache_key = f"pdf_report_{baseline}_{ArtifactService.workspace_key(workspace)}"
        cached_report = cache.get(cache_key)
        if cached_report:
            return cached_report

        table = ReportService.comparison_table(ReportService.fetch_runs(workspace), baseline)
        pdf_content = ReportService.render_pdf(table, ReportService.pass_table(ReportService.fetch_passes(workspace)))
        cache.set(cache_key, pdf_content, timeout=CACHE_TIMEOUT)
        return pdf_content

    @staticmethod
    def write_reports(directory, runs, baseline=None, passes=(), examples=None):
        """comparison.txt/.csv, passes.csv, examples.csv and report.pdf under ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        table = ReportService.comparison_table(runs, baseline)
        pass_table = ReportService.pass_table(list(passes))
        (directory / "comparison.txt").write_text(table.to_string(index=False) + "\n", encoding="utf-8")
        table.to_csv(directory / "comparison.csv", index=False, lineterminator="\n")
        pass_table.to_csv(directory / "passes.csv", index=False, lineterminator="\n")
        if examples is not None:
            examples.to_csv(directory / "examples.csv", index=False, lineterminator="\n")
        (directory / "report.pdf").write_bytes(ReportService.render_pdf(table, pass_table))
        logger.info(f"Wrote reports for {table['System'].nunique()} systems to {directory}")
        return table
