#include <math.h>
#include <stdio.h>
#include <string.h>

#include "rlp.h"

#define CHECK(cond)                                            \
    do {                                                       \
        if (!(cond)) {                                         \
            fprintf(stderr, "line %d: %s\n", __LINE__, #cond); \
            return 1;                                          \
        }                                                      \
    } while (0)

int main(int argc, char **argv) {
    double xs[] = {1.0, 2.0};
    double ys[] = {1.0, 2.0};
    double hs[] = {0.0, 0.0};
    double probe[] = {3.0};
    RlpMatrix *x = NULL, *y = NULL, *h = NULL, *g = NULL;
    CHECK(rlp_matrix_new(2, 1, xs, &x) == RLP_STATUS_OK);
    CHECK(rlp_matrix_new(2, 1, ys, &y) == RLP_STATUS_OK);
    CHECK(rlp_matrix_new(2, 1, hs, &h) == RLP_STATUS_OK);

    double value = -1.0;
    CHECK(rlp_loss_batch(x, y, h, probe, 1, &value, &g) == RLP_STATUS_OK);
    CHECK(fabs(value - 9.0) < 1e-12);
    double grad[2];
    CHECK(rlp_matrix_copy(g, grad, 2) == RLP_STATUS_OK);
    CHECK(fabs(grad[0] + 6.0 * 0.6) < 1e-12);

    RlpMatrix *bad = NULL;
    double three[] = {1.0, 2.0, 3.0};
    CHECK(rlp_matrix_new(3, 1, three, &bad) == RLP_STATUS_OK);
    CHECK(rlp_loss_mse(x, bad, &value) == RLP_STATUS_SHAPE_MISMATCH);
    CHECK(rlp_last_error_message() != NULL);

    RlpModel *m = NULL;
    CHECK(rlp_model_build(RLP_ARCHITECTURE_REGRESSION, 1, 4, false, 7, &m) == RLP_STATUS_OK);
    size_t din, dout, np;
    CHECK(rlp_model_info(m, &din, &dout, &np) == RLP_STATUS_OK);
    CHECK(din == 1 && dout == 1 && np == 13);
    if (argc > 1) {
        RlpModel *back = NULL;
        CHECK(rlp_model_save(m, argv[1]) == RLP_STATUS_OK);
        CHECK(rlp_model_load(argv[1], &back) == RLP_STATUS_OK);
        RlpMatrix *o1 = NULL, *o2 = NULL;
        CHECK(rlp_model_forward(m, x, &o1) == RLP_STATUS_OK);
        CHECK(rlp_model_forward(back, x, &o2) == RLP_STATUS_OK);
        double a[2], b[2];
        CHECK(rlp_matrix_copy(o1, a, 2) == RLP_STATUS_OK);
        CHECK(rlp_matrix_copy(o2, b, 2) == RLP_STATUS_OK);
        CHECK(memcmp(a, b, sizeof a) == 0);
        rlp_matrix_free(o1);
        rlp_matrix_free(o2);
        rlp_model_free(back);
    }

    RlpBatchSet *bs = NULL;
    CHECK(rlp_batches_generate(10, 3, 4, 1, &bs) == RLP_STATUS_OK);
    size_t count, size;
    CHECK(rlp_batches_shape(bs, &count, &size) == RLP_STATUS_OK);
    CHECK(count == 4 && size == 3);
    size_t idx[3];
    CHECK(rlp_batches_get(bs, 0, idx, 3) == RLP_STATUS_OK);
    CHECK(idx[0] < 10 && idx[1] < 10 && idx[2] < 10);

    rlp_batches_free(bs);
    rlp_model_free(m);
    rlp_matrix_free(x);
    rlp_matrix_free(y);
    rlp_matrix_free(h);
    rlp_matrix_free(g);
    rlp_matrix_free(bad);
    printf("ok %s\n", rlp_version());
    return 0;
}
