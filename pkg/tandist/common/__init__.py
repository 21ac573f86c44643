from tandist.common.table import Table  # noqa: F401
