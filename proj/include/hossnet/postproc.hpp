#pragma once

#include <algorithm>
#include <stdexcept>

#include "hossnet/core.hpp"

namespace hossnet {

/// Removes negative damage changes from a predicted sequence: each frame is
/// clamped from below by the corrected previous frame (a running maximum),
/// and the first frame by the anchor. The anchor is the last known ground
/// truth before the predicted window.
inline SampleSequence enforce_positive_direction(const SampleSequence& pred,
                                                 const FieldFrame& anchor) {
    pred.validate();
    if (pred.channels() != 1)
        throw std::invalid_argument("enforce_positive_direction: expected single-channel frames");
    if (anchor.channels() != 1 || anchor.height() != pred.height() ||
        anchor.width() != pred.width())
        throw std::invalid_argument("enforce_positive_direction: anchor shape mismatch");

    SampleSequence out = pred;
    const NdArray* prev = &anchor.values;
    for (auto& frame : out.frames) {
        for (std::size_t i = 0; i < frame.values.size(); ++i)
            frame.values[i] = std::max(frame.values[i], (*prev)[i]);
        prev = &frame.values;
    }
    return out;
}

/// Variant without known history: the first predicted frame anchors itself.
inline SampleSequence enforce_positive_direction(const SampleSequence& pred) {
    pred.validate();
    return enforce_positive_direction(pred, pred.frames.front());
}

}  // namespace hossnet
