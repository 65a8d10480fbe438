#include <stdio.h>
#include <stdint.h>

uint32_t crc_table[256];

void build_table(void) {
    for (uint32_t n = 0; n < 256; n++) {
        uint32_t c = n;
        for (int k = 0; k < 8; k++) {
            c = c & 1 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        }
        crc_table[n] = c;
    }
}

uint32_t crc_file(FILE *fp) {
    uint32_t crc = 0xFFFFFFFFu;
    int ch;
    while ((ch = fgetc(fp)) != EOF) {
        crc = crc_table[(crc ^ ch) & 0xFF] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

int main(int argc, char **argv) {
    if (argc < 2) return 1;
    FILE *fp = fopen(argv[1], "rb");
    if (fp == NULL) return 1;
    build_table();
    printf("%08x\n", crc_file(fp));
    fclose(fp);
    return 0;
}
