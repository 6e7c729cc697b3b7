#include "context-bar-controls.hpp"

static obs_module_t *get_os_module(const char *win, const char *mac, const char *linux)
{
#if defined(_WIN32)
	return obs_get_module(win);
#elif defined(__APPLE__)
	return obs_get_module(mac);
#else
	return obs_get_module(linux);
#endif
}

SourceToolbar::SourceToolbar(QWidget *parent) : QWidget(parent) {}

void SourceToolbar::SetLabel(const char *text)
{
	setToolTip(QString::fromUtf8(text));
}

void DisplayCaptureToolbar::Init()
{
	obs_module_t *mod = get_os_module("win-capture", "mac-capture", "linux-capture");
	if (!mod)
		return;

	SetLabel(obs_module_get_locale_text(mod, "Monitor"));
}

void AudioCaptureToolbar::Init()
{
	obs_module_t *mod = get_os_module("win-wasapi", "mac-capture", "linux-pulseaudio");
	if (!mod)
		return;

	SetLabel(obs_module_get_locale_text(mod, "Device"));
}

void WindowCaptureToolbar::Init()
{
	obs_module_t *mod = get_os_module("win-capture", "mac-capture", "linux-capture");
	if (!mod)
		return;

	SetLabel(obs_module_get_locale_text(mod, "Window"));
}

void ApplicationAudioCaptureToolbar::Init()
{
	obs_module_t *mod = obs_get_module("win-wasapi");
	const char *device_str = obs_module_get_locale_text(mod, "Window");
	SetLabel(device_str);
}
