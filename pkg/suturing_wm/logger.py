"""Package logger; handlers and levels are left to the entry point."""
import logging

#logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger("suturing_wm")
