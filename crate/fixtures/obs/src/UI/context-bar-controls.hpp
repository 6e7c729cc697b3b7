#pragma once

#include <QWidget>

extern "C" {
#include "../libobs/obs-module.h"
}

class SourceToolbar : public QWidget {
public:
	explicit SourceToolbar(QWidget *parent);
	virtual void Init() = 0;

protected:
	void SetLabel(const char *text);
};

class DisplayCaptureToolbar : public SourceToolbar {
public:
	using SourceToolbar::SourceToolbar;
	void Init() override;
};

class AudioCaptureToolbar : public SourceToolbar {
public:
	using SourceToolbar::SourceToolbar;
	void Init() override;
};

class WindowCaptureToolbar : public SourceToolbar {
public:
	using SourceToolbar::SourceToolbar;
	void Init() override;
};

class ApplicationAudioCaptureToolbar : public SourceToolbar {
public:
	using SourceToolbar::SourceToolbar;
	void Init() override;
};
