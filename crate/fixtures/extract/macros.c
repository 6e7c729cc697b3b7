#include <stdlib.h>

#define SQUARE(x) ((x) * (x))
#define SWAP(a, b) do { \
	int t_ = (a);        \
	(a) = (b);           \
	(b) = t_;            \
} while (0)
#define DEFINE_GETTER(name) int get_##name(void) { return name; }

static int counter;

DEFINE_GETTER(counter)

int square_sum(int a, int b)
{
	return SQUARE(a) + SQUARE(b);
}

void sort2(int *a, int *b)
{
	if (*a > *b)
		SWAP(*a, *b);
}
