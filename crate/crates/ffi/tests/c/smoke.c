#include <stdio.h>
#include "fragmentvc.h"

int run(const char *ckpt, const float *samples, size_t n) {
    FvcModel *model = NULL;
    FvcMatrix *mel = NULL, *feats = NULL, *out = NULL;
    FvcMatrix *attention[3] = {NULL, NULL, NULL};
    const FvcMatrix *targets[1];
    double score = 0.0;
    int rc = 1;

    if (fvc_model_load(ckpt, NULL, &model) != FVC_STATUS_OK) goto fail;
    if (fvc_log_mel(samples, n, &mel) != FVC_STATUS_OK) goto fail;
    if (fvc_model_features(model, mel, &feats) != FVC_STATUS_OK) goto fail;
    targets[0] = mel;
    if (fvc_convert(model, feats, targets, 1, &out, attention, 3) != FVC_STATUS_OK) goto fail;
    if (fvc_diagonality(attention[2], &score) != FVC_STATUS_OK) goto fail;
    printf("diagonality %f\n", score);
    rc = 0;
fail:
    if (rc) fprintf(stderr, "%s\n", fvc_last_error_message());
    for (int i = 0; i < 3; i++) fvc_matrix_free(attention[i]);
    fvc_matrix_free(out);
    fvc_matrix_free(feats);
    fvc_matrix_free(mel);
    fvc_model_free(model);
    return rc;
}
