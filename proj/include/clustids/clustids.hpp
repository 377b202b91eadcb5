#pragma once

#include "clustids/error.hpp"
#include "clustids/rng.hpp"
#include "clustids/dataset.hpp"
#include "clustids/ingest.hpp"
#include "clustids/preprocess.hpp"
#include "clustids/featsel.hpp"
#include "clustids/cf.hpp"
#include "clustids/cluster_model.hpp"
#include "clustids/birch.hpp"
#include "clustids/kmeans.hpp"
#include "clustids/cluster.hpp"
#include "clustids/mlp.hpp"
#include "clustids/train.hpp"
#include "clustids/metrics.hpp"
#include "clustids/report.hpp"
#include "clustids/pipeline.hpp"
