#include <stdio.h>

#if 0
static void disabled(void)
{
	puts("never built");
}
#endif

#ifdef _WIN32
static const char *sep(void) { return "\\"; }
#else
static const char *sep(void) { return "/"; }
#endif

int main(int argc, char **argv)
{
	(void)argc;
	printf("%s%s\n", sep(), argv[0]);
	return 0;
}
