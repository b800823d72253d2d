#pragma once

#include "emofeed/emotion.hpp"

namespace emofeed {

/// Conditioning record for one generation: a target emotion and the semantic
/// anchor the content reward measures drift from.
struct ConditionEmbedding {
  VAScore target;
  Vec anchor;

  /// ((V-5)/4, (A-5)/4) followed by the anchor.
  Vec encoding() const {
    Vec out(2 + anchor.size());
    out(0) = (target.valence() - kScaleMid) / 4.0;
    out(1) = (target.arousal() - kScaleMid) / 4.0;
    out.tail(anchor.size()) = anchor;
    return out;
  }
};

}  // namespace emofeed
