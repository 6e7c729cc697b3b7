#include <string>

namespace ui {

class Panel {
public:
	Panel(int w, int h);
	int area() const;
	void resize(int w, int h);

private:
	int w_, h_;
};

Panel::Panel(int w, int h) : w_(w), h_(h)
{
}

int Panel::area() const
{
	return w_ * h_;
}

void Panel::resize(int w, int h)
{
	w_ = w;
	h_ = h;
}

} // namespace ui

extern "C" {
int panel_area(int w, int h)
{
	ui::Panel p(w, h);
	return p.area();
}
}
