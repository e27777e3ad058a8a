// the else branch only fires once i passes 5
int i = 0;
int k = 0;
while (i < 8) {
    if (i < 5) {
        k = k + 1;
    } else {
        k = k - 1;
    }
    i = i + 1;
}
assert(k <= 5);
