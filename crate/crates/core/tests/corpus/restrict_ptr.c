int buf[6];

int sum(restrict buf int *p, int n) {
    int s = 0;
    int i;
    for (i = 0; i < n; i++) s += p[i];
    return s;
}

int main(int k) {
    int i;
    restrict buf int *q = buf;
    for (i = 0; i < 6; i++) buf[i] = i * k;
    q = q + 2;
    *q = 100;
    q[1] = q[0] + 1;
    q = q - 1;
    emit(*q);
    return sum(buf, 6) + sum(q, 3);
}
