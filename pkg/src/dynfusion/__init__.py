# -*- coding: utf-8 -*-

"""dynfusion: Dynamic attention fusion for multimodal sentiment regression."""

__version__ = '0.1.0'


def main(argv=None):
    """Entry point of the command line tool"""
    from .cli import main as cli_main
    return cli_main(argv)
