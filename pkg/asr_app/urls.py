from django.urls import path
from .views import asr_home_view, correct_view, report_view, runs_view

urlpatterns = [
    path('', asr_home_view, name='asr_home'),
    path('correct/', correct_view, name='correct'),
    path('runs/', runs_view, name='runs'),
    path('report/', report_view, name='report'),
]
