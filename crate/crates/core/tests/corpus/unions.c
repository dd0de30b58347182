union u { int i; float f; unsigned short h; };

int main(int x) {
    union u a;
    union u arr[3];
    a.i = x;
    emit(a.h);
    a.f = 1.0f;
    emit(a.i);
    arr[x & 1].i = x;
    arr[2].f = 2.5f;
    emit(arr[x & 1].h);
    return arr[2].i + a.h;
}
