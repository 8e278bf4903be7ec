import logging
import traceback

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from services.artifact_service import ArtifactService

logger = logging.getLogger(__name__)

VALIDATION_EXIT = 2
RUNTIME_EXIT = 3


class PipelineCommand(BaseCommand):
    """Common flags and exit codes: 2 for invalid input, 3 for runtime failures."""

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=settings.PIPELINE_SEED)
        parser.add_argument('--workspace', default=None, help='Workspace directory (default ARTIFACTS_DIR/default)')

    def handle(self, *args, **options):
        options['workspace'] = ArtifactService.workspace(options['workspace'])
        try:
            return self.run(**options)
        except CommandError:
            raise
        except ValueError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e}")
            raise CommandError(str(e), returncode=VALIDATION_EXIT)
        except Exception as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e}\n{traceback.format_exc()}")
            raise CommandError(str(e), returncode=RUNTIME_EXIT)

    def run(self, **options):
        raise NotImplementedError
