int i = 0;
while (i < 100000) {
    while (unknown()) {
    }
    i++;
}
assert(i == 100000);
