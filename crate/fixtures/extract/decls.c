#include <stddef.h>

struct point {
	int x;
	int y;
};

typedef struct {
	struct point a, b;
} segment;

enum color { RED, GREEN, BLUE };

static const int primes[] = { 2, 3, 5, 7 };

static struct point origin = { .x = 0, .y = 0 };

int length2(const segment *s);
extern void log_point(struct point p);

static struct point *
make_point(int x, int y)
{
	static struct point p;
	p.x = x;
	p.y = y;
	return &p;
}

int length2(const segment *s)
{
	int dx = s->b.x - s->a.x;
	int dy = s->b.y - s->a.y;
	return dx * dx + dy * dy;
}

static inline size_t prime_count(void) { return sizeof(primes) / sizeof(primes[0]); }
