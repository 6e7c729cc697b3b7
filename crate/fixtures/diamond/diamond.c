static int d(int x)
{
	return x * 2;
}

static int b(int x)
{
	return d(x) + 1;
}

static int c(int x)
{
	return d(x) - 1;
}

int a(int x)
{
	return b(x) + c(x);
}
