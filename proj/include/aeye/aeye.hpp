#pragma once

// Umbrella header.

#include "aeye/model.hpp"
#include "aeye/binary_io.hpp"
#include "aeye/hashing.hpp"
#include "aeye/parallel.hpp"
#include "aeye/store.hpp"
#include "aeye/ingest.hpp"
#include "aeye/projection.hpp"
#include "aeye/kmeans.hpp"
#include "aeye/tiling.hpp"
#include "aeye/validate.hpp"
#include "aeye/vector_index.hpp"
#include "aeye/embedder.hpp"
#include "aeye/search.hpp"
#include "aeye/server.hpp"
#include "aeye/export.hpp"
