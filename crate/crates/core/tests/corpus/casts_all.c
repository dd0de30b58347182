int main(int x, double d) {
    _Bool b = x;
    signed char sc = x;
    unsigned char uc = x;
    short s = x;
    unsigned short us = x;
    unsigned int ui = x;
    long l = x;
    unsigned long ul = x;
    long long ll = x;
    unsigned long long ull = x;
    float f = x;
    double g = x;
    emit(b);
    emit(sc);
    emit(uc);
    emit(s);
    emit(us);
    emit(ui);
    emit(l);
    emit(ul);
    emit(ll);
    emit(ull);
    emit(f);
    emit(g);
    emit((short)d);
    emit((unsigned char)d);
    emit((long long)d);
    emit((float)d);
    emit((_Bool)d);
    emit((unsigned long long)f);
    emit((double)ull);
    emit((signed char)ll);
    emit((unsigned short)f);
    return (short)70000 + (int)(unsigned char)300;
}
