"""
Allow running splatproto as a module: python -m splatproto
"""

from .cli import main

if __name__ == '__main__':
    import sys
    sys.exit(main())
