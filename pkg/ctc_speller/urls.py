"""
URL configuration for the ctc_speller project.
"""
from django.contrib import admin
from django.urls import path, include
from django.views.generic import RedirectView

urlpatterns = [
    path('admin/', admin.site.urls),
    path('asr/', include('asr_app.urls')),
    path('', RedirectView.as_view(url='asr/', permanent=False)),
]
