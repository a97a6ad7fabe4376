/* Extracts joints from a synthetic two-channel heatmap stack.
 *
 *   cc skeleton.c -Iinclude -Ltarget/debug -lhfnerf_ffi -lm -lpthread -ldl
 */
#include <math.h>
#include <stdio.h>

#include "hfnerf.h"

int main(void) {
    enum { K = 2, W = 24, H = 20 };
    static double values[K * W * H];
    for (int v = 0; v < H; v++)
        for (int u = 0; u < W; u++)
            values[v * W + u] = exp(-((u - 9) * (u - 9) + (v - 4) * (v - 4)) / 8.0);

    HfHeatmaps *stack = NULL;
    if (hf_heatmaps_new(K, W, H, values, &stack) != HF_STATUS_OK) {
        fprintf(stderr, "%s\n", hf_last_error_message());
        return 1;
    }
    HfJoint joints[K];
    HfStatus s = hf_extract_skeleton(stack, 1.5, 0.3, joints, K);
    hf_heatmaps_free(stack);
    if (s != HF_STATUS_OK) {
        fprintf(stderr, "%s\n", hf_last_error_message());
        return 1;
    }
    for (int k = 0; k < K; k++)
        printf("joint %d: present=%d u=%g v=%g\n", k, joints[k].present, joints[k].u, joints[k].v);
    return hf_heatmaps_new(K, W, H, NULL, &stack) == HF_STATUS_NULL_POINTER ? 0 : 1;
}
