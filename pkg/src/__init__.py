# QLDS semi-supervised classification package
