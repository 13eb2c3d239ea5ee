from .qfunction import CategoricalSupport, ForwardCache, QFunction

__all__ = ["CategoricalSupport", "ForwardCache", "QFunction"]
