int n;
int y = 0;
n = nondet();
assume(n >= 0 && n <= 3);
while (y < n)
    y = y + 1;
assert(y <= 3);
