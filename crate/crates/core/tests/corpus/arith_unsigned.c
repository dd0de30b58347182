unsigned main(unsigned a, unsigned b) {
    unsigned q = a / (b | 1u);
    unsigned r = a % (b | 1u);
    unsigned m = a * 2654435761u;
    emit(q);
    emit(r);
    emit(m >> 7);
    emit(a - b);
    if (a < b) return b - a;
    return q + r + (m >> 31);
}
