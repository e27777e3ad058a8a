int x = 0;
int y = 0;
while (x < 20) {
    if (y < 5) {
        y = y + 1;
    } else {
        y = 0;
    }
    x = x + 1;
}
assert(y <= 5);
assert(y >= 0);
