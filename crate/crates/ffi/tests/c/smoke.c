#include <stdio.h>
#include <string.h>
#include "pvran.h"

#define CHECK(x)                                                     \
    do {                                                             \
        PvStatus s_ = (x);                                           \
        if (s_ != PV_STATUS_OK) {                                    \
            char m_[256];                                            \
            pv_last_error(m_, sizeof m_);                            \
            fprintf(stderr, "%s: %s (%s)\n", #x, pv_status_name(s_), m_); \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(int argc, char **argv) {
    if (argc < 2) return 2;
    if (pv_bytes_per_subframe(25) != 30720) return 3;

    PvStore *srv, *cli;
    CHECK(pv_store_open(argv[1], 0, &srv));
    CHECK(pv_store_as_domain(srv, 7, &cli));

    PvChannel *a, *b;
    CHECK(pv_channel_create(srv, "demo/data", 4096, 4096, false, &a));
    CHECK(pv_channel_connect(cli, 0, "demo/data", false, &b));
    size_t n = 0;
    CHECK(pv_channel_write(b, (const uint8_t *)"hello", 5, &n));
    char buf[16] = {0};
    CHECK(pv_channel_read(a, (uint8_t *)buf, sizeof buf, &n));
    if (n != 5 || memcmp(buf, "hello", 5) != 0) return 4;

    PvPlan *plan;
    CHECK(pv_plan_new(&plan));
    PvSliceBands s1 = {1, 25, 595000000, 550000000, 0};
    PvSliceBands s2 = {2, 25, 597000000, 535000000, 1};
    CHECK(pv_plan_insert(plan, &s1));
    CHECK(pv_plan_insert(plan, &s2));
    uint32_t ids[4];
    size_t nids = 0;
    if (pv_plan_validate(plan, ids, 4, &nids) != PV_STATUS_CONFLICT || nids != 2) return 5;

    pv_plan_free(plan);
    pv_channel_free(b);
    pv_channel_free(a);
    pv_store_free(cli);
    pv_store_free(srv);
    printf("ok %zu\n", n);
    return 0;
}
