int main(int n) {
    int s = 0;
    int i;
    int j = 0;
    for (i = 0; i < (n & 31); i++) {
        if (i % 3 == 0) continue;
        s += i;
        if (s > 100) break;
    }
    do {
        j += 2;
    } while (j < (n & 15));
    while (1) {
        j--;
        if (j < 3) break;
    }
    emit(j);
    return s;
}
