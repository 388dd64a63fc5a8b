"""WordCount and KMeans applications plus the MapReduce runner they share."""

from .kmeans import (Centroid, KMeansResult, KMImpl, find_nearest_centroid, gen_point_store,
                     kmeans, miss_sequence_report, read_centroids, write_centroids)
from .mapreduce import MRConfigError, MRJob, MRResult, kv_record_mapper, mr_run, output_records
from .wordcount import WCImpl, gen_word_store, result_counts, text_blocks, wordcount

__all__ = [
    "Centroid", "KMeansResult", "KMImpl", "find_nearest_centroid", "gen_point_store", "kmeans",
    "miss_sequence_report", "read_centroids", "write_centroids",
    "MRConfigError", "MRJob", "MRResult", "kv_record_mapper", "mr_run", "output_records",
    "WCImpl", "gen_word_store", "result_counts", "text_blocks", "wordcount",
]
