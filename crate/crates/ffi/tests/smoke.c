#include <stdio.h>
#include <string.h>
#include "owrlab.h"

static int fail(const char *what) {
    const char *e = owrlab_last_error();
    fprintf(stderr, "%s: %s\n", what, e ? e : "(no message)");
    return 1;
}

int main(void) {
    OwrlabConfig *cfg = NULL;
    if (owrlab_config_from_toml("seeds = [1]\nbogus = 1\n", &cfg) != OWRLAB_STATUS_PARSE) return fail("bad toml accepted");
    if (cfg != NULL || owrlab_last_error() == NULL) return fail("parse failure left state");

    const char *toml =
        "[benchmark]\nnum_classes = 12\ninstances_per_class = 3\nsamples_per_instance = 4\n"
        "[schedule]\nknown_fraction = 0.5\nbase_count = 4\nstep_size = 2\n"
        "[[methods]]\nvariant = \"nno\"\nepochs_base = 2\nepochs_incremental = 1\n";
    if (owrlab_config_from_toml(toml, &cfg) != OWRLAB_STATUS_OK) return fail("config");
    uint64_t seeds[] = {3};
    if (owrlab_config_set_seeds(cfg, seeds, 1) != OWRLAB_STATUS_OK) return fail("seeds");

    OwrlabModel *model = NULL;
    if (owrlab_model_train(cfg, 0, 0, 3, &model) != OWRLAB_STATUS_OK) return fail("train");
    size_t n = owrlab_model_input_len(model);
    float px[2 * 2048];
    if (n > 2048) return fail("image too large");
    for (size_t i = 0; i < 2 * n; i++) px[i] = (float)(i % 7) / 7.0f;
    int64_t labels[2] = {-2, -2};
    if (owrlab_model_classify(model, px, 2, 1, labels) != OWRLAB_STATUS_OK) return fail("classify");
    if (labels[0] < OWRLAB_UNKNOWN || labels[1] < OWRLAB_UNKNOWN) return fail("labels not written");
    if (owrlab_model_train(cfg, 9, 0, 3, &model) != OWRLAB_STATUS_INVALID_ARGUMENT || model != NULL)
        return fail("bad index accepted");

    owrlab_model_free(model);
    owrlab_config_free(cfg);
    printf("ok %s\n", owrlab_version());
    return 0;
}
