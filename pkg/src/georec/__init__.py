"""Country listening archetypes and context-gated track recommendation.

The pipeline, end to end:

1. ``ingest``     -- parse listening-event / user logs, filter tracks and
                     countries, or generate synthetic data with planted
                     archetypes.
2. ``countrymap`` -- normalized country x track matrix, truncated PCA.
3. ``embed``      -- exact t-SNE down to 2-D.
4. ``cluster``    -- OPTICS ordering plus xi-steepness cluster extraction.
5. ``archetypes`` -- IDF-filtered top tracks and per-cluster demographics.
6. ``context``    -- four per-user context encodings (country/cluster
                     one-hots and centroid distances).
7. ``recsys``     -- context-gated variational autoencoder recommender,
                     most-popular and implicit-MF baselines.
8. ``metrics`` / ``evaluation`` -- ranking metrics, significance tests,
                     split protocol, experiment harness.
9. ``cli``        -- stage-by-stage command line with manifests and a
                     deterministic end-to-end ``reproduce`` mode.
"""

__version__ = "0.1.0"
