short main(signed char c, unsigned char u, short s, unsigned short us) {
    signed char c2 = c + 100;
    unsigned char u2 = u * 3;
    short s2 = s * 2;
    unsigned short us2 = us + 40000;
    _Bool b = c2 && u2;
    emit(c2);
    emit(u2);
    emit(s2);
    emit(us2);
    emit(b);
    return s2 + c2;
}
