"""Translation-memory prompting: fuzzy-match retrieval, few-shot prompt templates, TM/NMT routing and multi-bleu scoring."""
