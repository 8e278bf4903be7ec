from django.conf import settings
from django.http import HttpResponse, JsonResponse

from asr_app.models import ScoredRun
from services.artifact_service import ArtifactService
from services.report_service import ReportService
from services.speller_service import SpellerService
from ml.transformer import correct
import logging

logger = logging.getLogger(__name__)


def _tokens(text):
    """Space-separated tokens, or one token per character when there are no spaces."""
    text = text.strip()
    return tuple(text.split()) if " " in text else tuple(text)


def correct_view(request):
    if request.method == 'GET':
        text = request.GET.get('text')
        if text is None:
            return JsonResponse({'error': 'Missing "text" parameter'}, status=400)
        if not settings.SPELLER_CHECKPOINT:
            return JsonResponse({'error': 'SPELLER_CHECKPOINT is not configured'}, status=500)
        try:
            model = SpellerService.load(settings.SPELLER_CHECKPOINT)
            result = correct(model, _tokens(text))
            logger.info(f"Corrected {text!r} to {''.join(result.tokens)!r}")
            return JsonResponse({
                'input': text,
                'output': " ".join(result.tokens) if " " in text.strip() else "".join(result.tokens),
                'truncated': result.truncated,
            }, status=200)
        except ValueError as e:
            logger.error(f"Invalid correction request {text!r}: {e}")
            return JsonResponse({'error': str(e)}, status=400)
        except Exception as e:
            logger.error(f"Error correcting {text!r}: {e}")
            return JsonResponse({'error': str(e)}, status=500)


def runs_view(request):
    if request.method == 'GET':
        workspace = ArtifactService.workspace_key(request.GET.get('workspace'))
        runs = list(ScoredRun.objects.filter(workspace=workspace).order_by('testset', 'system_name').values(
            'system_name', 'testset', 'substitutions', 'deletions', 'insertions', 'reference_length', 'cer',
        ))
        return JsonResponse({'workspace': workspace, 'runs': runs}, status=200)


def report_view(request):
    report_format = request.GET.get('format', 'json')
    baseline = request.GET.get('baseline') or None
    workspace = request.GET.get('workspace') or None

    try:
        if report_format == 'json':
            return JsonResponse(ReportService.generate_json_report(baseline, workspace), status=200)

        elif report_format == 'csv':
            response = HttpResponse(ReportService.generate_csv_report(baseline, workspace), content_type='text/csv')
            response['Content-Disposition'] = 'attachment; filename="comparison.csv"'
            return response

        elif report_format == 'pdf':
            response = HttpResponse(ReportService.generate_pdf_report(baseline, workspace), content_type='application/pdf')
            response['Content-Disposition'] = 'attachment; filename="report.pdf"'
            return response

        else:
            return JsonResponse({'error': 'Invalid format requested. Use "json", "csv" or "pdf".'}, status=400)

    except ValueError as e:
        logger.error(f"Error generating report against {baseline}: {e}")
        return JsonResponse({'error': str(e)}, status=400)
    except Exception as e:
        logger.error(f"Error generating report against {baseline}: {e}")
        return JsonResponse({'error': str(e)}, status=500)


def asr_home_view(request):
    return HttpResponse("Welcome to the CTC speller API!!")
