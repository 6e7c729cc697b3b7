/* int ghost(void) { return 0; } */
// int ghost2(void) { return 0; }

static const char *banner = "int fake(void) { return 1; }";

int brace_count(const char *s)
{
	int depth = 0;
	for (; *s; s++) {
		if (*s == '{')
			depth++;
		else if (*s == '}')
			depth--;
	}
	/* unbalanced in a comment: { { { */
	return depth;
}

const char *
describe(int d)
{
	return d > 0 ? "open {" : "closed }";
}
